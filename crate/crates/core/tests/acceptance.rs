//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so every criterion executes even when an earlier
//! one fails; the process exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wavemdd::corpus::{gen_corpus, gen_utterance, write_dataset, CorpusConfig, PerSplit, Split};
use wavemdd::ctc::{ctc_brute_force, ctc_loss, LogProbFrame};
use wavemdd::decode::{greedy_attention_decode, joint_beam_decode, rank, BeamConfig};
use wavemdd::frontend::{materialize_filters, measured_frequency_response, SincFilterbankParams, Waveform};
use wavemdd::mddeval::{align, evaluate, metrics, ConfusionCounts, OpKind, UttAnnotation};
use wavemdd::pipeline::{pipeline_run, PipelineConfig, PipelineReport};
use wavemdd::seqmodel::{attention_nll, AsrModel, Frontend, ModelConfig};
use wavemdd::tensor::{Params, Tensor};
use wavemdd::train::{grad_check, grad_check_joint, joint_loss, FrontendKind};
use wavemdd::Execution;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn phones(n: usize) -> Vec<String> {
    ["aa", "iy", "uw", "eh", "ao", "er"][..n].iter().map(|s| s.to_string()).collect()
}

fn random_logits(rng: &mut ChaCha8Rng, t: usize, v: usize, spread: f64) -> Tensor {
    let data = (0..t * v).map(|_| rng.random_range(-spread..spread)).collect();
    Tensor::from_vec(&[t, v], data)
}

fn all_sequences(alphabet: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for a in 1..=alphabet {
                let mut e: Vec<usize> = s.clone();
                e.push(a);
                next.push(e);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Probability mass of every collapsed label sequence, by enumerating all
/// `V^T` frame paths once.
fn path_mass(lp: &LogProbFrame) -> BTreeMap<Vec<usize>, f64> {
    let (t_len, v) = (lp.num_frames(), lp.vocab_size());
    let mut mass = BTreeMap::new();
    let mut path = vec![0usize; t_len];
    for code in 0..v.pow(t_len as u32) {
        let mut c = code;
        for slot in path.iter_mut() {
            *slot = c % v;
            c /= v;
        }
        let mut label = Vec::new();
        let mut prev = None;
        for &s in &path {
            if Some(s) != prev && s != 0 {
                label.push(s);
            }
            prev = Some(s);
        }
        let lp_sum: f64 = path.iter().enumerate().map(|(t, &k)| lp.at(t, k)).sum();
        *mass.entry(label).or_insert(0.0) += lp_sum.exp();
    }
    mass
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let targets = all_sequences(3, 3);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in 1..=6 {
            let lp = LogProbFrame::from_logits(&random_logits(&mut rng, t, 4, 3.0)).map_err(|e| e.to_string())?;
            let mass = path_mass(&lp);
            for target in &targets {
                let got = ctc_loss(&lp, target).map_err(|e| e.to_string())?.loss;
                let p = mass.get(target).copied().unwrap_or(0.0);
                let want = if p > 0.0 { -p.ln() } else { f64::INFINITY };
                let diff = if got.is_infinite() && want.is_infinite() { 0.0 } else { (got - want).abs() };
                ensure(diff < 1e-8, || format!("seed {seed} T {t} target {target:?}: {got} vs {want}"))?;
                worst = worst.max(diff);
                checked += 1;
            }
            if seed < 5 {
                for target in &targets {
                    let a = ctc_loss(&lp, target).map_err(|e| e.to_string())?.loss;
                    let b = ctc_brute_force(&lp, target).map_err(|e| e.to_string())?;
                    let diff = if a.is_infinite() && b.is_infinite() { 0.0 } else { (a - b).abs() };
                    ensure(diff < 1e-8, || format!("library brute force disagrees at seed {seed}: {a} vs {b}"))?;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{checked} cases, max |diff| {worst:.2e}, {:.1} s", elapsed.as_secs_f64()))
}

#[derive(Clone)]
struct Logits(Tensor);

impl Params for Logits {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![("logits".into(), &self.0)]
    }
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![("logits".into(), &mut self.0)]
    }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let eps = 1e-5;
    let mut ctc_worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = rng.random_range(4..=12);
        let len = rng.random_range(1..=4);
        let target: Vec<usize> = (0..len).map(|_| rng.random_range(1..=5)).collect();
        let logits = Logits(random_logits(&mut rng, t, 6, 2.0));
        let r = grad_check(&logits, eps, None, |m, g| {
            let lp = LogProbFrame::from_logits(&m.0)?;
            let out = ctc_loss(&lp, &target)?;
            if let Some(g) = g {
                g.0.axpy(1.0, &out.grad_logits);
            }
            Ok(out.loss)
        })
        .map_err(|e| e.to_string())?;
        ctc_worst = ctc_worst.max(r.max_rel_error());
    }
    ensure(ctc_worst < 1e-5, || format!("CTC logits rel. error {ctc_worst:.2e}"))?;

    // Max-pooling, peak-gain normalization and LeakyReLU make the loss
    // piecewise smooth in the cutoffs. Central differences are only an oracle
    // where no such choice flips within +-eps, so straddling instances are redrawn.
    let mut cutoff_worst = 0.0f64;
    let mut model_worst = 0.0f64;
    let (mut accepted, mut redrawn) = (0, 0);
    let mut seed = 0u64;
    while accepted < 10 {
        ensure(seed < 100, || "fewer than 10 smooth instances among 100 draws".into())?;
        let model = AsrModel::new(FrontendKind::Sinc.tiny_model(phones(5), seed)).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        // 990 samples: 12 pooled frames through the 31-tap kernel, 6 encoder states.
        let wave = Waveform::new((0..990).map(|_| rng.random_range(-0.5..0.5)).collect(), 16000)
            .map_err(|e| e.to_string())?;
        let target: Vec<usize> = (0..4).map(|i| 1 + (i + seed as usize) % 5).collect();
        seed += 1;
        if !front_end_is_smooth(&model, &wave, eps)? {
            redrawn += 1;
            continue;
        }
        let r = grad_check_joint(&model, &wave, &target, 0.5, eps, None).map_err(|e| e.to_string())?;
        for g in &r.groups {
            if g.name.starts_with("frontend.theta_") {
                cutoff_worst = cutoff_worst.max(g.max_rel_error);
            }
        }
        model_worst = model_worst.max(r.max_rel_error());
        accepted += 1;
    }
    ensure(cutoff_worst < 1e-4, || format!("sinc cutoff rel. error {cutoff_worst:.2e}"))?;
    ensure(model_worst < 1e-4, || format!("tiny model rel. error {model_worst:.2e}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "CTC {ctc_worst:.2e}, cutoffs {cutoff_worst:.2e}, full model {model_worst:.2e} \
         ({redrawn} instances redrawn at front-end kinks), {:.1} s",
        elapsed.as_secs_f64()
    ))
}

fn sinc_pattern(model: &AsrModel, wave: &Waveform) -> Result<Vec<usize>, String> {
    match &model.frontend {
        Frontend::Sinc(s) => Ok(s.forward(wave).map_err(|e| e.to_string())?.1.selection_pattern()),
        Frontend::Fbank { .. } => Err("expected a sinc front-end".into()),
    }
}

fn front_end_is_smooth(model: &AsrModel, wave: &Waveform, eps: f64) -> Result<bool, String> {
    let base = sinc_pattern(model, wave)?;
    let Frontend::Sinc(s) = &model.frontend else {
        return Err("expected a sinc front-end".into());
    };
    for which in 0..2 {
        for i in 0..s.filters.filter_count() {
            for delta in [eps, -eps] {
                let mut m = model.clone();
                let Frontend::Sinc(ms) = &mut m.frontend else { unreachable!() };
                let t = if which == 0 { &mut ms.filters.theta_low } else { &mut ms.filters.theta_band };
                t.data_mut()[i] += delta;
                if sinc_pattern(&m, wave)? != base {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

fn criterion_3() -> Outcome {
    let (f1, f2, taps, fs) = (300.0, 700.0, 251, 16000);
    let p = SincFilterbankParams::from_cutoffs_hz(&[(f1, f2)], taps, fs).map_err(|e| e.to_string())?;
    let kern = &materialize_filters(&p).map_err(|e| e.to_string())?[0];
    let resp = measured_frequency_response(kern, 4096, fs).map_err(|e| e.to_string())?;
    let (peak_f, peak) = resp.iter().copied().fold((0.0, 0.0), |b, x| if x.1 > b.1 { x } else { b });
    // Hamming main lobe is 4 fs / L wide; stay that far away from both cutoffs.
    let transition = 4.0 * fs as f64 / taps as f64;
    let stop: Vec<f64> = resp
        .iter()
        .filter(|(f, _)| *f < f1 - transition || *f > f2 + transition)
        .map(|&(_, m)| m)
        .collect();
    let stop_mean = stop.iter().sum::<f64>() / stop.len() as f64;
    ensure(stop_mean < 0.1 * peak, || format!("stopband mean {stop_mean:.4} vs peak {peak:.4}"))?;
    ensure((f1..=f2).contains(&peak_f), || format!("peak at {peak_f} Hz"))?;
    let zero = SincFilterbankParams::from_cutoffs_hz(&[(500.0, 500.0)], taps, fs).map_err(|e| e.to_string())?;
    let zk = &materialize_filters(&zero).map_err(|e| e.to_string())?[0];
    ensure(zk.taps.iter().all(|&v| v == 0.0), || "f1 = f2 kernel is not exactly zero".into())?;
    Ok(format!(
        "peak {peak:.3} at {peak_f:.1} Hz, stopband mean {:.4} x peak, zero-band kernel exact",
        stop_mean / peak
    ))
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Counts whose precision and recall are exactly the given percentages
/// (two decimals): `TN / (TN + FN) = P`, `TN / (TN + FP) = R`.
fn counts_for(precision: f64, recall: f64) -> ConfusionCounts {
    let frac = |pct: f64| {
        let num = (pct * 100.0).round() as u64;
        let g = gcd(num, 10_000);
        (num / g, 10_000 / g)
    };
    let (pa, pb) = frac(precision);
    let (ra, rb) = frac(recall);
    let tn = pa / gcd(pa, ra) * ra;
    ConfusionCounts {
        tn,
        fn_: tn / pa * (pb - pa),
        fp: tn / ra * (rb - ra),
        ..ConfusionCounts::default()
    }
}

fn criterion_4() -> Outcome {
    // (precision, recall, F1) rows of the published detection table.
    let table = [
        (35.42, 52.88, 42.42),
        (53.64, 53.54, 53.59),
        (55.31, 52.43, 53.83),
        (55.15, 47.60, 51.10),
        (55.31, 50.09, 52.57),
    ];
    let mut worst = 0.0f64;
    for (p, r, f1) in table {
        let m = metrics(&counts_for(p, r));
        ensure((m.precision - p).abs() < 1e-9 && (m.recall - r).abs() < 1e-9, || {
            format!("count construction gave P {} R {}", m.precision, m.recall)
        })?;
        let diff = (m.f1 - f1).abs();
        ensure(diff <= 0.01, || format!("P {p} R {r}: F1 {:.4}, expected {f1}", m.f1))?;
        worst = worst.max(diff);
    }
    Ok(format!("5 rows, max |F1 - published| {worst:.4}"))
}

fn criterion_5() -> Outcome {
    let model = AsrModel::new(FrontendKind::Sinc.tiny_model(phones(3), 7)).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let wave =
        Waveform::new((0..1400).map(|_| rng.random_range(-0.5..0.5)).collect(), 16000).map_err(|e| e.to_string())?;
    let target = [1, 3, 2];
    let prep = model.prepare(&wave).map_err(|e| e.to_string())?;
    let ctc = ctc_loss(&prep.ctc, &target).map_err(|e| e.to_string())?.loss;
    let att = attention_nll(&model, &wave, &target).map_err(|e| e.to_string())?;
    let at = |a: f64| joint_loss(&model, &wave, &target, a, None).map(|l| l.loss).map_err(|e| e.to_string());
    let (l1, l0, lh) = (at(1.0)?, at(0.0)?, at(0.5)?);
    ensure(l1 == ctc, || format!("alpha 1: {l1} vs CTC {ctc}"))?;
    ensure(l0 == att, || format!("alpha 0: {l0} vs attention {att}"))?;
    let mean = 0.5 * (ctc + att);
    ensure((lh - mean).abs() <= 4.0 * f64::EPSILON * mean.abs(), || format!("alpha 0.5: {lh} vs {mean}"))?;
    Ok(format!("CTC {ctc:.6}, attention {att:.6}, mean {lh:.6}"))
}

fn oracle_corpus_config() -> CorpusConfig {
    CorpusConfig {
        error_rate: PerSplit::uniform(0.14),
        ..CorpusConfig::default()
    }
}

fn oracle_report(cfg: &CorpusConfig) -> Result<(wavemdd::mddeval::MetricsReport, u64), String> {
    let ds = gen_corpus(cfg, Execution::Parallel).map_err(|e| e.to_string())?;
    let anns: Vec<UttAnnotation> = ds.utterances.iter().map(|u| u.annotation.clone()).collect();
    let hyps: BTreeMap<String, Vec<String>> = anns.iter().map(|a| (a.utt_id.clone(), a.realized())).collect();
    let injected = anns.iter().map(|a| a.error_count() as u64).sum();
    Ok((evaluate(&anns, &hyps).map_err(|e| e.to_string())?, injected))
}

fn criterion_6() -> Outcome {
    let (m, injected) = oracle_report(&oracle_corpus_config())?;
    let c = m.counts;
    ensure(c.fp == 0 && c.fn_ == 0 && c.de == 0, || format!("FP {} FN {} DE {}", c.fp, c.fn_, c.de))?;
    ensure(m.recall == 100.0 && m.precision == 100.0 && m.dar == 100.0, || {
        format!("recall {} precision {} DAR {}", m.recall, m.precision, m.dar)
    })?;
    ensure(c.tn == injected && c.cd == injected, || format!("TN {} CD {} injected {injected}", c.tn, c.cd))?;
    Ok(format!("{injected} injected errors, TN = CD = {}, TP {}", c.tn, c.tp))
}

fn textbook_distance(r: &[usize], h: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=h.len()).collect();
    for i in 1..=r.len() {
        let mut cur = vec![i; h.len() + 1];
        for j in 1..=h.len() {
            let sub = prev[j - 1] + usize::from(r[i - 1] != h[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        prev = cur;
    }
    prev[h.len()]
}

fn criterion_7() -> Outcome {
    let seqs = all_sequences(3, 5);
    let mut pairs = 0usize;
    for r in &seqs {
        for h in &seqs {
            let (d, ops) = align(r, h);
            let want = textbook_distance(r, h);
            ensure(d == want, || format!("{r:?} vs {h:?}: {d} != {want}"))?;
            let (mut i, mut j, mut cost) = (0, 0, 0);
            for op in &ops {
                match op.kind {
                    OpKind::Match | OpKind::Substitute => {
                        ensure(op.ref_pos == Some(i) && op.hyp_pos == Some(j), || "non-monotone op".into())?;
                        let same = r[i] == h[j];
                        ensure(same == (op.kind == OpKind::Match), || "wrong match flag".into())?;
                        cost += usize::from(!same);
                        i += 1;
                        j += 1;
                    }
                    OpKind::Delete => {
                        ensure(op.ref_pos == Some(i) && op.hyp_pos.is_none(), || "bad deletion".into())?;
                        cost += 1;
                        i += 1;
                    }
                    OpKind::Insert => {
                        ensure(op.ref_pos.is_none() && op.hyp_pos == Some(j), || "bad insertion".into())?;
                        cost += 1;
                        j += 1;
                    }
                }
            }
            ensure(i == r.len() && j == h.len() && cost == d, || format!("{r:?} vs {h:?}: ops do not cover"))?;
            pairs += 1;
        }
    }
    Ok(format!("{pairs} pairs agree"))
}

fn toy_config() -> PipelineConfig {
    PipelineConfig::default().with_seed(1)
}

fn criterion_8(out: &Path) -> Result<(String, PipelineReport), String> {
    let cfg = toy_config();
    let start = Instant::now();
    let report = pipeline_run(&cfg, Some(out), Execution::Sequential, |_| {}).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    print!("{report}");
    let mut parts = Vec::new();
    for kind in [FrontendKind::Sinc, FrontendKind::Fbank] {
        let row = report.row(kind.name()).ok_or_else(|| format!("no {} row", kind.name()))?;
        let per = row.metrics.per.ok_or("PER missing")?;
        ensure(per < 20.0, || format!("{} PER {per:.2}", kind.name()))?;
        parts.push(format!("{} PER {per:.2}", kind.name()));
    }
    ensure(elapsed < Duration::from_secs(30 * 60), || format!("took {elapsed:?}"))?;
    Ok((format!("{}, {:.0} s on one thread", parts.join(", "), elapsed.as_secs_f64()), report))
}

fn criterion_9() -> Outcome {
    let corpus = CorpusConfig::default();
    let mut greedy_checked = 0;
    for i in 0..50usize {
        let model = AsrModel::new(ModelConfig::desk_sinc(corpus.phone_symbols(), (i % 5) as u64))
            .map_err(|e| e.to_string())?;
        let utt = gen_utterance(&corpus, 550 + i, Split::Test).map_err(|e| e.to_string())?;
        let prep = model.prepare(&utt.wave).map_err(|e| e.to_string())?;
        let cfg = BeamConfig {
            alpha: 0.0,
            beam_width: 1,
            max_len: 12,
        };
        let beam = joint_beam_decode(&model, &prep, &cfg).map_err(|e| e.to_string())?;
        let greedy = greedy_attention_decode(&model, &prep, 12).map_err(|e| e.to_string())?;
        ensure(beam.prefix == greedy, || format!("utterance {i}: beam {:?} greedy {greedy:?}", beam.prefix))?;
        greedy_checked += 1;
    }

    let model = AsrModel::new(FrontendKind::Sinc.tiny_model(phones(3), 3)).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let wave =
        Waveform::new((0..1200).map(|_| rng.random_range(-0.5..0.5)).collect(), 16000).map_err(|e| e.to_string())?;
    let base = model.prepare(&wave).map_err(|e| e.to_string())?;
    let mut exhaustive_checked = 0;
    for seed in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        for t in 1..=4 {
            let lp = LogProbFrame::from_logits(&random_logits(&mut rng, t, 4, 3.0)).map_err(|e| e.to_string())?;
            for max_len in 1..=3 {
                let mut best: Option<(f64, Vec<usize>)> = None;
                for seq in all_sequences(3, max_len) {
                    let s = -ctc_loss(&lp, &seq).map_err(|e| e.to_string())?.loss;
                    if best.as_ref().is_none_or(|(bs, bp)| rank(s, &seq, *bs, bp).is_lt()) {
                        best = Some((s, seq));
                    }
                }
                let (want_score, want) = best.expect("the empty sequence is always scored");
                let mut prep = base.clone();
                prep.ctc = lp.clone();
                let cfg = BeamConfig {
                    alpha: 1.0,
                    beam_width: 64,
                    max_len,
                };
                let got = joint_beam_decode(&model, &prep, &cfg).map_err(|e| e.to_string())?;
                ensure(got.prefix == want, || {
                    format!(
                        "seed {seed} T {t} max_len {max_len}: beam {:?} ({}) vs exhaustive {want:?} ({want_score})",
                        got.prefix, got.score
                    )
                })?;
                exhaustive_checked += 1;
            }
        }
    }
    Ok(format!(
        "{greedy_checked} greedy reductions, {exhaustive_checked} exhaustive CTC instances"
    ))
}

fn dir_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).expect("readable dir").flatten().collect();
        entries.sort_by_key(|e| e.path());
        for e in entries {
            let p = e.path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).expect("inside root").to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).expect("readable file"));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn compare_dirs(a: &Path, b: &Path) -> Result<usize, String> {
    let (x, y) = (dir_bytes(a), dir_bytes(b));
    ensure(x.keys().eq(y.keys()), || "file sets differ".into())?;
    for (k, v) in &x {
        ensure(y[k] == *v, || format!("{k} differs"))?;
    }
    Ok(x.len())
}

fn criterion_10(first_run: &Path, scratch: &Path) -> Outcome {
    let cfg = oracle_corpus_config();
    let mut reports = Vec::new();
    for name in ["oracle_a", "oracle_b"] {
        let ds = gen_corpus(&cfg, Execution::Parallel).map_err(|e| e.to_string())?;
        write_dataset(&ds, &scratch.join(name)).map_err(|e| e.to_string())?;
        reports.push(oracle_report(&cfg)?.0.to_json());
    }
    let corpus_files = compare_dirs(&scratch.join("oracle_a"), &scratch.join("oracle_b"))?;
    ensure(reports[0] == reports[1], || "oracle reports differ".into())?;

    let second = scratch.join("toy_b");
    pipeline_run(&toy_config(), Some(&second), Execution::Parallel, |_| {}).map_err(|e| e.to_string())?;
    let run_files = compare_dirs(first_run, &second)?;
    Ok(format!(
        "oracle corpus {corpus_files} files, toy run {run_files} files (corpus, checkpoints, hypotheses, reports) identical"
    ))
}

fn report(n: usize, name: &str, outcome: &Outcome, failures: &mut usize) {
    match outcome {
        Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
        Err(why) => {
            *failures += 1;
            println!("criterion {n:>2} FAIL  {name}: {why}");
        }
    }
}

fn main() {
    let scratch = tempfile::tempdir().expect("temporary directory");
    let toy = scratch.path().join("toy_a");
    let mut failures = 0;
    let mut lines = vec![
        (1, "CTC vs brute force", criterion_1()),
        (2, "gradient checks", criterion_2()),
        (3, "sinc filter response", criterion_3()),
        (4, "F1 arithmetic", criterion_4()),
        (5, "joint-loss endpoints", criterion_5()),
        (6, "MDD oracle hierarchy", criterion_6()),
        (7, "alignment oracle", criterion_7()),
        (8, "toy end-to-end run", criterion_8(&toy).map(|(s, _)| s)),
        (9, "decoding reductions", criterion_9()),
    ];
    let c10 = if lines[7].2.is_ok() {
        criterion_10(&toy, scratch.path())
    } else {
        Err("first toy run failed".into())
    };
    lines.push((10, "determinism", c10));
    println!();
    for (n, name, outcome) in &lines {
        report(*n, name, outcome, &mut failures);
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
