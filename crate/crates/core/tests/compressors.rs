use bicomp_core::compressors::{
    empirical_class_check, top_k_indices, CompressorSpec, DeclaredClass, KSubsets, ShiftEncoding,
};
use bicomp_core::rng::{StreamKey, StreamRole};
use bicomp_core::vector::{dist_sq, norm_sq};
use bicomp_core::Error;
use proptest::prelude::*;

fn key(round: usize) -> StreamKey {
    StreamKey::new(4, StreamRole::Dual, 0, round)
}

fn vec_and_k() -> impl Strategy<Value = (Vec<f64>, usize)> {
    (1usize..=32).prop_flat_map(|d| (prop::collection::vec(-1e3f64..1e3, d), 1..=d))
}

proptest! {
    #[test]
    fn topk_contracts((x, k) in vec_and_k()) {
        let d = x.len();
        let spec = CompressorSpec::top_k(k, d).unwrap();
        let c = spec.stream(key(0)).compress(&x).unwrap().to_dense();
        prop_assert!(dist_sq(&c, &x) <= (1.0 - k as f64 / d as f64) * norm_sq(&x));
    }

    #[test]
    fn topk_keeps_largest_magnitudes((x, k) in vec_and_k()) {
        let idx = top_k_indices(&x, k);
        prop_assert_eq!(idx.len(), k);
        let smallest_kept = idx.iter().map(|&i| x[i].abs()).fold(f64::INFINITY, f64::min);
        for (j, v) in x.iter().enumerate() {
            if !idx.contains(&j) {
                prop_assert!(v.abs() <= smallest_kept);
            }
        }
    }

    #[test]
    fn randk_scales_kept_coordinates((x, k) in vec_and_k(), round in 0usize..1000) {
        let d = x.len();
        let spec = CompressorSpec::rand_k(k, d).unwrap();
        let m = spec.stream(key(round)).compress(&x).unwrap();
        prop_assert_eq!(m.stored(), k);
        for (i, v) in m.iter() {
            prop_assert_eq!(v, x[i] * (d as f64 / k as f64));
        }
    }

    #[test]
    fn streams_are_reproducible((x, k) in vec_and_k(), round in 0usize..1000) {
        let spec = CompressorSpec::rand_k(k, x.len()).unwrap();
        let a = spec.stream(key(round)).compress(&x).unwrap();
        let b = spec.stream(key(round)).compress(&x).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn declared_parameters() {
    assert_eq!(CompressorSpec::top_k(3, 12).unwrap().alpha().unwrap(), 0.25);
    assert_eq!(CompressorSpec::rand_k(2, 10).unwrap().omega().unwrap(), 4.0);
    assert_eq!(
        CompressorSpec::scale(0.5, 3).unwrap().alpha().unwrap(),
        0.75
    );
    let id = CompressorSpec::identity(5);
    assert!(matches!(id.declared_class(), DeclaredClass::Both { .. }));
    assert_eq!((id.alpha().unwrap(), id.omega().unwrap()), (1.0, 0.0));
    let wrapped = CompressorSpec::scaled_unbiased(CompressorSpec::rand_k(1, 4).unwrap()).unwrap();
    assert_eq!(wrapped.alpha().unwrap(), 0.25);
}

#[test]
fn class_misuse_is_reported() {
    assert!(matches!(
        CompressorSpec::top_k(1, 4).unwrap().omega(),
        Err(Error::ClassMisuse(_))
    ));
    assert!(matches!(
        CompressorSpec::rand_k(1, 4).unwrap().alpha(),
        Err(Error::ClassMisuse(_))
    ));
    assert!(CompressorSpec::top_k(0, 4).is_err());
    assert!(CompressorSpec::rand_k(5, 4).is_err());
}

#[test]
fn shift_encodings() {
    assert_eq!(
        CompressorSpec::top_k(1, 4).unwrap().shift_encoding(),
        ShiftEncoding::Overwrite
    );
    assert_eq!(
        CompressorSpec::identity(4).shift_encoding(),
        ShiftEncoding::Overwrite
    );
    assert_ne!(
        CompressorSpec::scale(0.5, 4).unwrap().shift_encoding(),
        ShiftEncoding::Overwrite
    );
}

#[test]
fn k_subsets_enumerates_binomial() {
    assert_eq!(KSubsets::new(6, 2).count(), 15);
    assert_eq!(KSubsets::new(8, 8).count(), 1);
}

#[test]
fn empirical_checks_agree_with_declarations() {
    for spec in [
        CompressorSpec::top_k(2, 6).unwrap(),
        CompressorSpec::rand_k(2, 6).unwrap(),
        CompressorSpec::scale(0.3, 6).unwrap(),
        CompressorSpec::scaled_unbiased(CompressorSpec::rand_k(3, 6).unwrap()).unwrap(),
        CompressorSpec::identity(6),
    ] {
        let report = empirical_class_check(&spec, 20, 1, 1e-9).unwrap();
        assert!(report.exact, "{}", spec.name());
        assert!(report.consistent, "{}: {report:?}", spec.name());
    }
}
