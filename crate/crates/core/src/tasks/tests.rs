use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn copy_layout() {
    let b = gen_copy(100, 8, 10, 3, &mut rng(0)).unwrap();
    assert_eq!(b.steps(), 120);
    assert_eq!(b.input_size(), 10);
    b.validate(10, true).unwrap();
    for j in 0..3 {
        let inp = b.sequence_inputs(j);
        let tgt = b.sequence_targets(j);
        assert_eq!(inp.iter().position(|&s| s == marker_id(8)), Some(109));
        assert!(inp[..10].iter().all(|&s| s < 8));
        assert!(inp[10..109].iter().chain(&inp[110..]).all(|&s| s == blank_id(8)));
        assert_eq!(&tgt[110..], &inp[..10]);
        assert!(tgt[..110].iter().all(|&s| s == blank_id(8)));
    }
    assert!(b.mask.iter().all(|&m| m));
}

#[test]
fn copy_draws_with_replacement() {
    let b = gen_copy(20, 8, 10, 200, &mut rng(1)).unwrap();
    let repeats = (0..200)
        .filter(|&j| {
            let mut s = b.sequence_inputs(j)[..10].to_vec();
            s.sort_unstable();
            s.windows(2).any(|w| w[0] == w[1])
        })
        .count();
    // ten draws from eight symbols always repeat
    assert_eq!(repeats, 200);
}

#[test]
fn copy_rejects_short_lag() {
    assert!(gen_copy(10, 8, 10, 1, &mut rng(0)).is_err());
    assert!(gen_copy(11, 0, 10, 1, &mut rng(0)).is_err());
    assert!(gen_copy(11, 8, 10, 0, &mut rng(0)).is_err());
}

#[test]
fn variable_copy_degenerate_lag() {
    let b = gen_copy_variable(10, 8, 10, 5, &mut rng(2)).unwrap();
    assert_eq!(b.steps(), 30);
    assert!(b.mask.iter().all(|&m| m));
}

#[test]
fn variable_copy_pads_and_masks() {
    let b = gen_copy_variable(60, 8, 10, 16, &mut rng(3)).unwrap();
    b.validate(11, true).unwrap();
    for j in 0..16 {
        let inp = b.sequence_inputs(j);
        let tgt = b.sequence_targets(j);
        let mask: Vec<bool> = (0..b.steps()).map(|t| b.mask[t * 16 + j]).collect();
        let len = mask.iter().filter(|&&m| m).count();
        assert!(mask[..len].iter().all(|&m| m) && mask[len..].iter().all(|&m| !m));
        assert!(inp[len..].iter().all(|&s| s == pad_id(8)));
        assert_eq!(&tgt[len - 10..len], &inp[..10]);
        assert_eq!(inp[len - 11], marker_id(8));
    }
}

#[test]
fn variable_copy_lag_mean() {
    let mut r = rng(4);
    let (k, t_max) = (10, 50);
    let mut total = 0usize;
    let samples = 10_000;
    for _ in 0..samples / 100 {
        let b = gen_copy_variable(t_max, 8, k, 100, &mut r).unwrap();
        for j in 0..100 {
            let len = (0..b.steps()).filter(|&t| b.mask[t * 100 + j]).count();
            total += len - 2 * k;
        }
    }
    let mean = total as f64 / samples as f64;
    let expect = (k + t_max) as f64 / 2.0;
    assert!((mean - expect).abs() / expect < 0.02, "{mean}");
}

#[test]
fn denoise_layout() {
    let b = gen_denoise(100, 8, 10, 4, &mut rng(5)).unwrap();
    assert_eq!(b.steps(), 111);
    b.validate(10, true).unwrap();
    for j in 0..4 {
        let inp = b.sequence_inputs(j);
        let tgt = b.sequence_targets(j);
        let positions: Vec<usize> = (0..100).filter(|&t| inp[t] < 8).collect();
        assert_eq!(positions.len(), 10);
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(inp[100], marker_id(8));
        let data: Vec<usize> = inp.iter().copied().filter(|&s| s < 8).collect();
        assert_eq!(data, &tgt[101..]);
    }
}

#[test]
fn baseline_values() {
    assert!((baseline_ce(100, 8, 10) - 0.1733).abs() < 5e-5);
    assert!((baseline_ce(200, 8, 10) - 0.0945).abs() < 5e-5);
    assert!((baseline_ce(100, 8, 10) - 0.17).abs() <= 0.005);
    assert!((baseline_ce(200, 8, 10) - 0.09).abs() <= 0.005);
    assert_eq!(baseline_ce(100, 8, 0), 0.0);
}

#[test]
fn generators_are_reproducible() {
    for spec in [
        TaskSpec::Copy { t: 20, n: 8, recall_k: 10 },
        TaskSpec::VariableCopy { t_max: 30, n: 8, recall_k: 10 },
        TaskSpec::Denoise { t: 20, n: 8, recall_k: 10 },
    ] {
        assert_eq!(spec.generate(4, &mut rng(9)).unwrap(), spec.generate(4, &mut rng(9)).unwrap());
        assert_ne!(spec.generate(4, &mut rng(9)).unwrap(), spec.generate(4, &mut rng(10)).unwrap());
    }
}

fn tiny_idx(n: usize) -> (Vec<u8>, Vec<u8>) {
    let pixels: Vec<u8> = (0..n * PIXELS).map(|i| (i % 256) as u8).collect();
    let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    (encode_idx_images(&pixels, 28, 28), encode_idx_labels(&labels))
}

#[test]
fn idx_round_trip() {
    let (img, lab) = tiny_idx(3);
    assert_eq!(u32::from_be_bytes(img[..4].try_into().unwrap()), 2051);
    assert_eq!(u32::from_be_bytes(lab[..4].try_into().unwrap()), 2049);
    let images = parse_idx_images(&img).unwrap();
    assert_eq!(images.count(), 3);
    assert_eq!((images.rows, images.cols), (28, 28));
    assert!(images.pixels.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
    assert_eq!(images.pixels.get(0, 255), 1.0);
    assert_eq!(parse_idx_labels(&lab).unwrap(), vec![0, 1, 2]);
}

#[test]
fn idx_errors_carry_offsets() {
    let (img, lab) = tiny_idx(2);
    match parse_idx_images(&lab) {
        Err(TaskError::Format { offset: 0, .. }) => {}
        other => panic!("{other:?}"),
    }
    match parse_idx_images(&img[..img.len() - 1]) {
        Err(TaskError::Format { offset, .. }) => assert_eq!(offset, img.len() - 1),
        other => panic!("{other:?}"),
    }
    match parse_idx_labels(&lab[..6]) {
        Err(TaskError::Format { offset: 4, .. }) => {}
        other => panic!("{other:?}"),
    }
    let mut long = lab.clone();
    long.push(0);
    assert!(parse_idx_labels(&long).is_err());
}

#[test]
fn load_mnist_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = tiny_idx(4);
    let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
    std::fs::write(&ip, img).unwrap();
    std::fs::write(&lp, lab).unwrap();
    let (images, labels) = load_mnist_idx(&ip, &lp).unwrap();
    assert_eq!(images.count(), labels.len());
    let err = load_mnist_idx(&dir.path().join("nope"), &lp).unwrap_err();
    assert!(err.to_string().contains("nope"));
}

#[test]
fn psmnist_permutation() {
    let (img, lab) = tiny_idx(3);
    let images = parse_idx_images(&img).unwrap();
    let labels = parse_idx_labels(&lab).unwrap();
    let a = make_psmnist(&images, &labels, 42).unwrap();
    let b = make_psmnist(&images, &labels, 42).unwrap();
    assert_eq!(a.permutation(), b.permutation());
    let mut sorted = a.permutation().to_vec();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..PIXELS).collect::<Vec<_>>());
    assert_ne!(a.permutation(), make_psmnist(&images, &labels, 43).unwrap().permutation());

    let seq = Psmnist::with_permutation(&images, &labels, (0..PIXELS).collect()).unwrap();
    assert_eq!(seq.sequence(1), images.pixels.row(1));

    let batch = a.batch(&[2, 0]).unwrap();
    assert_eq!((batch.steps(), batch.batch_size(), batch.input_size()), (PIXELS, 2, 1));
    assert_eq!(batch.masked_count(), 2);
    assert_eq!(batch.step_mask(PIXELS - 1), &[true, true]);
    assert_eq!(batch.step_targets(PIXELS - 1), &[2, 0]);
    assert_eq!(batch.step_input(5).data(), &[a.sequence(2)[5], a.sequence(0)[5]]);
}

#[test]
fn text_vocab_by_first_occurrence() {
    let c = TextCorpus::parse("aba").unwrap();
    assert_eq!(c.vocab.len(), 2);
    assert_eq!(c.ids, vec![0, 1, 0]);
    assert!(TextCorpus::parse("").is_err());
    match c.encode("abc") {
        Err(TaskError::Format { offset: 2, .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn tbptt_windows() {
    let text: String = (0..1003).map(|i| char::from(b'a' + (i % 7) as u8)).collect();
    let c = TextCorpus::parse(&text).unwrap();
    let it = iter_tbptt(&c.ids, c.vocab.len(), 4, 50).unwrap();
    // L = 250 per stream, floor(249 / 50) = 4
    assert_eq!(it.num_windows(), 4);
    let windows: Vec<Batch> = it.map(Result::unwrap).collect();
    assert_eq!(windows.len(), 4);
    for (w, b) in windows.iter().enumerate() {
        assert_eq!(b.steps(), 50);
        b.validate(7, true).unwrap();
        for s in 0..4 {
            let inp = b.sequence_inputs(s);
            let tgt = b.sequence_targets(s);
            assert_eq!(&inp[1..], &tgt[..49]);
            assert_eq!(inp[0], c.ids[s * 250 + w * 50]);
            assert_eq!(tgt[49], c.ids[s * 250 + w * 50 + 50]);
        }
    }
    assert!(iter_tbptt(&c.ids, 7, 4, 250).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generated_batches_are_well_formed(seed in 0u64..1000, t in 11usize..40, k in 0usize..8, b in 1usize..5) {
        let mut r = rng(seed);
        let copy = gen_copy(t, 8, k.min(t - 1), b, &mut r).unwrap();
        copy.validate(10, true).unwrap();
        let var = gen_copy_variable(t, 8, k, b, &mut r).unwrap();
        var.validate(11, true).unwrap();
        let den = gen_denoise(t, 8, k, b, &mut r).unwrap();
        den.validate(10, true).unwrap();
        prop_assert_eq!(den.steps(), t + 1 + k);
        for batch in [&copy, &var, &den] {
            let sums: Vec<f64> = batch.inputs.data().chunks(batch.input_size()).map(|r| r.iter().sum()).collect();
            prop_assert!(sums.iter().all(|&s| s == 1.0));
        }
    }

    #[test]
    fn idx_parsers_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let _ = parse_idx_images(&bytes);
        let _ = parse_idx_labels(&bytes);
    }
}
