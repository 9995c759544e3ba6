use proptest::prelude::*;

use wavemdd::frontend::{
    filter_bank_outputs, ideal_frequency_response, materialize_filters, raw_sinc_kernel, FbankConfig, FbankExtractor,
    SincFilterbankParams, Waveform,
};

fn wave(v: Vec<f64>) -> Waveform {
    Waveform::new(v, 16000).unwrap()
}

fn band() -> impl Strategy<Value = (f64, f64)> {
    (30.0..6000.0f64, 60.0..1500.0f64).prop_map(|(lo, w)| (lo, lo + w))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kernels_are_symmetric(bands in prop::collection::vec(band(), 1..4), half in 5usize..40) {
        let params = SincFilterbankParams::from_cutoffs_hz(&bands, 2 * half + 1, 16000).unwrap();
        for k in materialize_filters(&params).unwrap() {
            let n = k.len();
            prop_assert_eq!(n, 2 * half + 1);
            for i in 0..n {
                prop_assert_eq!(k.taps[i], k.taps[n - 1 - i]);
            }
        }
    }

    #[test]
    fn equal_cutoffs_give_a_zero_kernel(f in 0.0..0.5f64, half in 1usize..60) {
        prop_assert!(raw_sinc_kernel(f, f, 2 * half + 1).iter().all(|&t| t == 0.0));
    }

    #[test]
    fn filter_outputs_are_linear(
        x in prop::collection::vec(-1.0..1.0f64, 64..128),
        y in prop::collection::vec(-1.0..1.0f64, 64..128),
        a in -0.5..0.5f64,
        b in -0.5..0.5f64,
        bands in prop::collection::vec(band(), 1..3),
    ) {
        let n = x.len().min(y.len());
        let (x, y) = (&x[..n], &y[..n]);
        let kernels = materialize_filters(&SincFilterbankParams::from_cutoffs_hz(&bands, 31, 16000).unwrap()).unwrap();
        let mix: Vec<f64> = x.iter().zip(y).map(|(p, q)| a * p + b * q).collect();
        let ox = filter_bank_outputs(&wave(x.to_vec()), &kernels).unwrap();
        let oy = filter_bank_outputs(&wave(y.to_vec()), &kernels).unwrap();
        let om = filter_bank_outputs(&wave(mix), &kernels).unwrap();
        for i in 0..kernels.len() {
            prop_assert_eq!(om[i].len(), n - 30);
            for t in 0..om[i].len() {
                let want = a * ox[i][t] + b * oy[i][t];
                prop_assert!((om[i][t] - want).abs() < 1e-9 * (1.0 + want.abs()));
            }
        }
    }

    #[test]
    fn fbank_frame_count_follows_the_hop(n in 0usize..8000) {
        let ex = FbankExtractor::new(FbankConfig::default(), 16000).unwrap();
        let expect = if n < 400 { 0 } else { (n - 400) / 160 + 1 };
        prop_assert_eq!(ex.num_frames(n), expect);
    }

    #[test]
    fn mel_init_cutoffs_are_ordered(count in 1usize..100) {
        let p = SincFilterbankParams::mel_init(count, 251, 16000).unwrap();
        prop_assert_eq!(p.filter_count(), count);
        for i in 0..count {
            let (f1, f2) = p.cutoffs_hz(i);
            prop_assert!(0.0 <= f1 && f1 < f2 && f2 <= 8000.0, "filter {}: ({}, {})", i, f1, f2);
        }
    }
}

#[test]
fn ideal_response_edges() {
    assert_eq!(ideal_frequency_response(100.0, 200.0, 100.0).unwrap(), 0.5);
    assert_eq!(ideal_frequency_response(100.0, 200.0, 200.0).unwrap(), 0.5);
    assert_eq!(ideal_frequency_response(100.0, 200.0, 150.0).unwrap(), 1.0);
    assert_eq!(ideal_frequency_response(100.0, 200.0, 99.0).unwrap(), 0.0);
    assert!(ideal_frequency_response(100.0, 200.0, -1.0).is_err());
    assert!(ideal_frequency_response(200.0, 100.0, 150.0).is_err());
}

#[test]
fn short_waves_are_rejected() {
    let kernels = materialize_filters(&SincFilterbankParams::mel_init(2, 31, 16000).unwrap()).unwrap();
    assert!(filter_bank_outputs(&wave(vec![0.1; 30]), &kernels).is_err());
    assert_eq!(filter_bank_outputs(&wave(vec![0.1; 31]), &kernels).unwrap()[0].len(), 1);
}
