use std::collections::BTreeSet;

use proptest::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use wavemdd::corpus::{
    default_inventory, gen_corpus, gen_utterance, read_dataset, read_wav, synth_wave, write_dataset, write_wav,
    CorpusConfig, PerSplit, Split,
};
use wavemdd::frontend::Waveform;
use wavemdd::{Execution, MddError};

fn small(seed: u64, n: usize) -> CorpusConfig {
    CorpusConfig {
        num_utterances: n,
        seed,
        ..CorpusConfig::default()
    }
}

fn spectrum(x: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf[..x.len() / 2 + 1].iter().map(|c| c.norm()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn same_seed_same_corpus(seed in 0u64..10_000) {
        let cfg = small(seed, 24);
        let a = gen_corpus(&cfg, Execution::Parallel).unwrap();
        let b = gen_corpus(&cfg, Execution::Sequential).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn splits_are_disjoint_and_sized(seed in 0u64..10_000, n in 3usize..60) {
        let cfg = small(seed, n);
        let ds = gen_corpus(&cfg, Execution::Parallel).unwrap();
        let [tr, dv, te] = cfg.split_counts();
        prop_assert_eq!(tr + dv + te, n);
        let ids = |s| ds.split(s).map(|u| u.utt_id().to_string()).collect::<BTreeSet<_>>();
        let (a, b, c) = (ids(Split::Train), ids(Split::Dev), ids(Split::Test));
        prop_assert_eq!((a.len(), b.len(), c.len()), (tr, dv, te));
        prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
    }

    #[test]
    fn utterances_respect_the_generation_contract(seed in 0u64..10_000, index in 0usize..500) {
        let cfg = CorpusConfig { error_rate: PerSplit::uniform(0.3), seed, ..CorpusConfig::default() };
        let u = gen_utterance(&cfg, index, Split::Test).unwrap();
        let a = &u.annotation;
        prop_assert!((cfg.min_phones..=cfg.max_phones).contains(&a.canonical.len()));
        prop_assert!(a.canonical.windows(2).all(|w| w[0] != w[1]));
        let realized = a.realized();
        prop_assert!(!realized.is_empty());
        prop_assert!(realized.windows(2).all(|w| w[0] != w[1]));
        let peak = u.wave.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!((peak - 0.9).abs() < 1e-12);
    }
}

#[test]
fn single_phone_spectrum_peaks_at_its_formants() {
    for spec in default_inventory() {
        let w = synth_wave(std::slice::from_ref(&spec.symbol), &default_inventory(), 3).unwrap();
        let x = &w.samples()[..1024];
        let mag = spectrum(x);
        let bin_hz = 16000.0 / 1024.0;
        let top = (1..mag.len()).max_by(|&a, &b| mag[a].total_cmp(&mag[b])).unwrap();
        let f_top = top as f64 * bin_hz;
        assert!((f_top - spec.formants_hz[0]).abs() <= bin_hz, "{}: peak {f_top}", spec.symbol);
        for &f in &spec.formants_hz[1..] {
            let b = (f / bin_hz).round() as usize;
            let local = mag[b - 1].max(mag[b]).max(mag[b + 1]);
            let median = {
                let mut m = mag.clone();
                m.sort_by(f64::total_cmp);
                m[m.len() / 2]
            };
            assert!(local > 10.0 * median, "{}: no peak near {f} Hz", spec.symbol);
        }
    }
}

#[test]
fn empirical_error_rate_tracks_the_configured_rate() {
    let cfg = CorpusConfig {
        num_utterances: 1500,
        error_rate: PerSplit::uniform(0.1),
        seed: 11,
        ..CorpusConfig::default()
    };
    let ds = gen_corpus(&cfg, Execution::Parallel).unwrap();
    let positions: usize = ds.utterances.iter().map(|u| u.annotation.canonical.len()).sum();
    let errors: usize = ds.utterances.iter().map(|u| u.annotation.error_count()).sum();
    let rate = errors as f64 / positions as f64;
    assert!((0.08..=0.12).contains(&rate), "rate {rate} over {positions} positions");
}

#[test]
fn wav_round_trip_is_within_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let w = synth_wave(&["aa".into(), "iy".into()], &default_inventory(), 5).unwrap();
    let path = dir.path().join("x.wav");
    write_wav(&w, &path).unwrap();
    let r = read_wav(&path).unwrap();
    assert_eq!(r.len(), w.len());
    for (a, b) in w.samples().iter().zip(r.samples()) {
        assert!((a - b).abs() <= 1.0 / 32768.0);
    }
    write_wav(&r, &path).unwrap();
    assert_eq!(read_wav(&path).unwrap(), r);
}

#[test]
fn stereo_and_empty_files_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = hound::WavSpec {
        channels: 2,
        sample_rate: 16000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let stereo = dir.path().join("stereo.wav");
    let mut w = hound::WavWriter::create(&stereo, spec).unwrap();
    for _ in 0..200 {
        w.write_sample(0i16).unwrap();
    }
    w.finalize().unwrap();
    assert!(matches!(read_wav(&stereo), Err(MddError::Format { .. })));

    spec.channels = 1;
    let empty = dir.path().join("empty.wav");
    hound::WavWriter::create(&empty, spec).unwrap().finalize().unwrap();
    assert!(matches!(read_wav(&empty), Err(MddError::Format { .. })));

    let missing = dir.path().join("missing.wav");
    let err = read_wav(&missing).unwrap_err();
    assert!(err.is_data_error());
    assert!(err.to_string().contains("missing.wav"));
}

#[test]
fn dataset_directory_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_corpus(&small(4, 12), Execution::Parallel).unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.phone_symbols(), ds.phone_symbols());
    assert_eq!(back.utterances.len(), ds.utterances.len());
    for (a, b) in ds.utterances.iter().zip(&back.utterances) {
        assert_eq!(a.annotation, b.annotation);
        assert_eq!(a.split, b.split);
        let q: Vec<f64> = a.wave.samples().iter().map(|v| (v * 32768.0).round() / 32768.0).collect();
        assert_eq!(Waveform::new(q, 16000).unwrap().len(), b.wave.len());
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = CorpusConfig::default();
    cfg.phones[1].formants_hz = cfg.phones[0].formants_hz.clone();
    cfg.phones[1].formants_hz[0] += 50.0;
    assert!(matches!(gen_corpus(&cfg, Execution::Sequential), Err(MddError::Config(_))));
    let cfg = CorpusConfig {
        min_phones: 5,
        max_phones: 2,
        ..CorpusConfig::default()
    };
    assert!(cfg.validate().is_err());
}
