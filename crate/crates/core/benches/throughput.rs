use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use wavemdd::corpus::{gen_corpus, CorpusConfig, Split};
use wavemdd::decode::{decode_all, BeamConfig};
use wavemdd::frontend::Waveform;
use wavemdd::seqmodel::AsrModel;
use wavemdd::train::{mean_loss, Example, FrontendKind};
use wavemdd::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn corpus() -> CorpusConfig {
    CorpusConfig {
        num_utterances: 40,
        ..CorpusConfig::default()
    }
}

fn bench_synthesis(c: &mut Criterion) {
    let cfg = corpus();
    let mut g = c.benchmark_group("synthesis");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| gen_corpus(&cfg, e).unwrap())
        });
    }
    g.finish();
}

fn bench_model(c: &mut Criterion) {
    let ds = gen_corpus(&corpus(), Execution::Parallel).unwrap();
    let phones = ds.phone_symbols();
    let utts: Vec<_> = ds.split(Split::Train).take(8).collect();
    let waves: Vec<(String, Waveform)> = utts.iter().map(|u| (u.utt_id().to_string(), u.wave.clone())).collect();
    for kind in [FrontendKind::Fbank, FrontendKind::Sinc] {
        let model = AsrModel::new(kind.desk_model(phones.clone(), 1)).unwrap();
        let examples: Vec<Example> = utts
            .iter()
            .map(|u| Example {
                utt_id: u.utt_id().to_string(),
                wave: u.wave.clone(),
                target: model.vocab.encode(&u.annotation.realized()).unwrap(),
            })
            .collect();
        let beam = BeamConfig::default();

        let mut g = c.benchmark_group(format!("{}/loss", kind.name()));
        g.sample_size(10);
        for (name, exec) in MODES {
            g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
                b.iter(|| mean_loss(&model, &examples, 0.5, e).unwrap())
            });
        }
        g.finish();

        let mut g = c.benchmark_group(format!("{}/decode", kind.name()));
        g.sample_size(10);
        for (name, exec) in MODES {
            g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
                b.iter(|| decode_all(&model, &waves, &beam, e).unwrap())
            });
        }
        g.finish();
    }
}

criterion_group!(benches, bench_synthesis, bench_model);
criterion_main!(benches);
