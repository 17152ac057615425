use std::panic::{catch_unwind, AssertUnwindSafe};

use proptest::prelude::*;
use vgda::data::{
    decode_features, encode_features, gen_synthetic, read_features, write_features, Dataset,
    SynthConfig,
};
use vgda::graph::{Domain, FrameFeatureSequence};
use vgda::trainer::{Checkpoint, MetricRow, TrainConfig};
use vgda::Error;

fn small_dataset() -> Dataset {
    let cfg = SynthConfig {
        n_classes: 3,
        videos_per_class: 2,
        dim: 5,
        t_min: 3,
        t_max: 7,
        seed: 4,
        ..SynthConfig::default()
    };
    gen_synthetic(&cfg).unwrap().0
}

fn small_checkpoint() -> Checkpoint {
    let config = TrainConfig {
        d_h: 2,
        enc_hidden: 3,
        cls_hidden: [3, 2],
        disc_hidden: 2,
        epochs: 1,
        ..TrainConfig::default()
    };
    let params = config.dims(4, 2).init_params(8).unwrap();
    Checkpoint {
        config,
        d_in: 4,
        num_classes: 2,
        epoch: 1,
        params,
        history: vec![
            MetricRow {
                epoch: 0,
                step: Some(0),
                loss_cls: Some(0.69),
                loss_frame: Some(1.38),
                loss_video: Some(1.4),
                disc_acc_frame: Some(0.5),
                disc_acc_video: Some(0.25),
                src_acc: Some(0.5),
                tgt_acc: None,
            },
            MetricRow {
                epoch: 1,
                src_acc: Some(0.75),
                tgt_acc: Some(0.5),
                ..MetricRow::default()
            },
        ],
    }
}

#[derive(Debug, Clone)]
enum Damage {
    Truncate(usize),
    Flip(usize, u8),
    Set(usize, u8),
    Insert(usize, u8),
    Append(Vec<u8>),
}

fn damage() -> impl Strategy<Value = Damage> {
    prop_oneof![
        any::<usize>().prop_map(Damage::Truncate),
        (any::<usize>(), 1u8..=255).prop_map(|(i, m)| Damage::Flip(i, m)),
        (any::<usize>(), any::<u8>()).prop_map(|(i, b)| Damage::Set(i, b)),
        (any::<usize>(), any::<u8>()).prop_map(|(i, b)| Damage::Insert(i, b)),
        prop::collection::vec(any::<u8>(), 1..8).prop_map(Damage::Append),
    ]
}

fn apply(bytes: &[u8], d: &Damage) -> Vec<u8> {
    let mut b = bytes.to_vec();
    match d {
        Damage::Truncate(i) => b.truncate(i % b.len()),
        Damage::Flip(i, m) => {
            let i = i % b.len();
            b[i] ^= m;
        }
        Damage::Set(i, v) => {
            let i = i % b.len();
            b[i] = *v;
        }
        Damage::Insert(i, v) => b.insert(i % (b.len() + 1), *v),
        Damage::Append(tail) => b.extend_from_slice(tail),
    }
    b
}

fn is_named(e: &Error) -> bool {
    matches!(e, Error::Format(_) | Error::Data(_))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(600))]

    /// Damaged files either fail with a named error or decode to something
    /// that re-encodes to exactly the damaged bytes.
    #[test]
    fn damaged_feature_files(d in damage()) {
        let bytes = encode_features(&small_dataset()).unwrap();
        let bad = apply(&bytes, &d);
        let r = catch_unwind(AssertUnwindSafe(|| decode_features(&bad, Domain::Source)));
        prop_assert!(r.is_ok(), "decoder panicked on {:?}", d);
        match r.unwrap() {
            Ok(ds) => prop_assert_eq!(&encode_features(&ds).unwrap(), &bad),
            Err(e) => prop_assert!(is_named(&e), "{:?} -> {}", d, e),
        }
        if let Damage::Truncate(_) = d {
            prop_assert!(decode_features(&bad, Domain::Source).is_err());
        }
    }

    #[test]
    fn damaged_checkpoints(d in damage()) {
        let bytes = small_checkpoint().to_bytes().unwrap();
        let bad = apply(&bytes, &d);
        let r = catch_unwind(AssertUnwindSafe(|| Checkpoint::from_bytes(&bad)));
        prop_assert!(r.is_ok(), "reader panicked on {:?}", d);
        match r.unwrap() {
            Ok(c) => prop_assert_eq!(c.to_bytes().unwrap(), bad),
            Err(e) => prop_assert!(matches!(e, Error::Format(_)), "{:?} -> {}", d, e),
        }
    }

    #[test]
    fn feature_round_trip(frames in prop::collection::vec(prop::collection::vec(-1e6f32..1e6, 3), 1..10), label in prop::option::of(0usize..100)) {
        let v = FrameFeatureSequence::from_rows("x", Domain::Target, label, &frames).unwrap();
        let ds = Dataset::new(vec![v]);
        let bytes = encode_features(&ds).unwrap();
        let back = decode_features(&bytes, Domain::Target).unwrap();
        prop_assert_eq!(back.iter().next().unwrap().raw(), ds.iter().next().unwrap().raw());
        prop_assert_eq!(encode_features(&back).unwrap(), bytes);
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let c = small_checkpoint();
    c.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, c);
    assert_eq!(std::fs::read(&path).unwrap(), c.to_bytes().unwrap());
}

#[test]
fn feature_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.vgf");
    let ds = small_dataset();
    write_features(&ds, &path).unwrap();
    let back = read_features(&path, Domain::Source).unwrap();
    assert_eq!(back.len(), ds.len());
    for (a, b) in back.iter().zip(ds.iter()) {
        assert_eq!(a.label, b.label);
        assert_eq!(
            a.raw().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.raw().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }
}

#[test]
fn missing_file_is_a_validation_error() {
    let e = read_features("/nonexistent/x.vgf", Domain::Source).unwrap_err();
    assert_eq!(e.class(), vgda::ErrorClass::Validation);
}
