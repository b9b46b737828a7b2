use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{Tape, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn zeroed(mut p: Params, prefixes: &[&str]) -> Params {
    let names: Vec<String> = p.names().cloned().collect();
    for n in names {
        if prefixes.iter().any(|pre| n.starts_with(pre)) {
            p.get_mut(&n).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    p
}

fn random_state(spec: &CellSpec, batch: usize, seed: u64) -> CellState {
    let mut r = rng(seed);
    let mut s = CellState::zeros(spec, batch);
    let fill = |t: &mut Tensor, r: &mut ChaCha8Rng| t.data_mut().iter_mut().for_each(|v| *v = r.gen_range(-0.9..0.9));
    fill(&mut s.h, &mut r);
    if let Some(m) = s.m.as_mut() {
        fill(m, &mut r);
    }
    if let Some(c) = s.c.as_mut() {
        fill(c, &mut r);
    }
    s
}

use rand::Rng;

fn input(batch: usize, d: usize, seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::new(vec![batch, d], (0..batch * d).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn run_step(spec: &CellSpec, params: &Params, state: &CellState, x: &Tensor) -> CellState {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let sv = state.bind(&mut tape);
    let xv = tape.leaf(x.clone());
    step(spec, &mut tape, &bound, &sv, xv).unwrap().values(&tape)
}

fn nru_spec() -> CellSpec {
    CellSpec::nru(3, 4, 9, 1).unwrap()
}

#[test]
fn nru_rejects_non_square_head_memory_product() {
    assert!(CellSpec::nru(3, 4, 8, 1).is_err());
    assert!(CellSpec::nru(3, 4, 8, 2).is_ok());
    assert!(CellSpec::nru(3, 4, 0, 1).is_err());
    let mut spec = nru_spec();
    spec.memory_size = 10;
    assert!(init_params(&spec, &mut rng(0)).is_err());
}

#[test]
fn nru_zero_heads_keep_memory() {
    let spec = nru_spec();
    let params = zeroed(init_params(&spec, &mut rng(1)).unwrap(), &["alpha", "beta"]);
    let state = random_state(&spec, 2, 5);
    let next = run_step(&spec, &params, &state, &input(2, 3, 6));
    assert_eq!(next.m, state.m);
}

#[test]
fn nru_zero_core_weights_give_zero_hidden() {
    let spec = nru_spec();
    let params = zeroed(init_params(&spec, &mut rng(1)).unwrap(), &["W_", "b_h"]);
    let next = run_step(&spec, &params, &random_state(&spec, 2, 2), &input(2, 3, 3));
    assert!(next.h.data().iter().all(|&v| v == 0.0));
}

#[test]
fn nru_memory_is_exactly_additive_over_spans() {
    let spec = nru_spec();
    let params = zeroed(init_params(&spec, &mut rng(4)).unwrap(), &["alpha", "beta"]);
    let mut state = random_state(&spec, 2, 8);
    let start = state.m.clone();
    for t in 0..20 {
        state = run_step(&spec, &params, &state, &input(2, 3, 100 + t));
    }
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(start.as_ref().unwrap()), bits(state.m.as_ref().unwrap()));
}

#[test]
fn head_direction_with_unit_factors() {
    // k = 1, m = 4: p = q = ones(2) gives v = [1,1,1,1] / 4^{1/5}
    let spec = CellSpec::nru(1, 1, 4, 1).unwrap();
    let mut params = zeroed(init_params(&spec, &mut rng(0)).unwrap(), &["write", "erase"]);
    for name in ["write_p.b", "write_q.b"] {
        params.insert(name, Tensor::ones(&[2]));
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let x = tape.leaf(Tensor::zeros(&[1, 1]));
    let h = tape.leaf(Tensor::zeros(&[1, 1]));
    let m = tape.leaf(Tensor::zeros(&[1, 4]));
    let (vw, ve) = nru_head_directions(&spec, &mut tape, &bound, x, h, m).unwrap();
    let expect = 4f64.powf(-0.2);
    for v in tape.value(vw).data() {
        assert!((v - expect).abs() < 1e-15);
    }
    // erase factors are all zero: guarded, not NaN
    assert!(tape.value(ve).data().iter().all(|&v| v == 0.0));
}

#[test]
fn relu_heads_zero_out_negative_directions() {
    let mut spec = CellSpec::nru(1, 1, 4, 1).unwrap();
    spec.heads_use_relu = true;
    let mut params = zeroed(init_params(&spec, &mut rng(0)).unwrap(), &["write", "erase"]);
    params.insert("write_p.b", Tensor::vector(vec![1.0, 2.0]).unwrap());
    params.insert("write_q.b", Tensor::vector(vec![-1.0, -3.0]).unwrap());
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let x = tape.leaf(Tensor::zeros(&[1, 1]));
    let h = tape.leaf(Tensor::zeros(&[1, 1]));
    let m = tape.leaf(Tensor::zeros(&[1, 4]));
    let (vw, _) = nru_head_directions(&spec, &mut tape, &bound, x, h, m).unwrap();
    assert!(tape.value(vw).data().iter().all(|&v| v == 0.0));
    let loss = tape.sum(vw);
    let g = tape.backward(loss).unwrap();
    for (name, v) in bound.iter() {
        assert!(g.get_or_zeros(&tape, *v).all_finite(), "{name}");
    }
}

#[test]
fn lstm_saturated_gates_keep_cell() {
    let spec = CellSpec::with_defaults(CellKind::Lstm, 3, 4, 10);
    let mut params = init_params(&spec, &mut rng(2)).unwrap();
    let mut b = vec![0.0; 16];
    b[..4].iter_mut().for_each(|v| *v = -50.0);
    b[4..8].iter_mut().for_each(|v| *v = 50.0);
    params.insert("b", Tensor::vector(b).unwrap());
    let state = random_state(&spec, 2, 3);
    let next = run_step(&spec, &params, &state, &input(2, 3, 4));
    for (a, b) in next.c.unwrap().data().iter().zip(state.c.unwrap().data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn zero_params_give_zero_hidden_for_gated_and_vanilla_cells() {
    for kind in [CellKind::Lstm, CellKind::Gru, CellKind::RnnId, CellKind::RnnOrth] {
        let mut spec = CellSpec::with_defaults(kind, 3, 4, 10);
        spec.layer_norm = false;
        let params = zeroed(init_params(&spec, &mut rng(2)).unwrap(), &[""]);
        let next = run_step(&spec, &params, &CellState::zeros(&spec, 2), &input(2, 3, 9));
        assert!(next.h.data().iter().all(|&v| v == 0.0), "{kind}");
    }
}

#[test]
fn gru_closed_update_gate_copies_state() {
    let spec = CellSpec::with_defaults(CellKind::Gru, 3, 4, 10);
    let mut params = init_params(&spec, &mut rng(5)).unwrap();
    let mut b = vec![0.0; 12];
    b[..4].iter_mut().for_each(|v| *v = -50.0);
    params.insert("b", Tensor::vector(b).unwrap());
    let state = random_state(&spec, 2, 6);
    let next = run_step(&spec, &params, &state, &input(2, 3, 7));
    for (a, b) in next.h.data().iter().zip(state.h.data()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn janet_forget_bias_extremes() {
    let spec = CellSpec::with_defaults(CellKind::Janet, 3, 4, 10);
    let base = init_params(&spec, &mut rng(5)).unwrap();
    let state = random_state(&spec, 2, 6);
    let x = input(2, 3, 7);

    let mut keep = base.clone();
    let mut b = vec![0.0; 8];
    b[..4].iter_mut().for_each(|v| *v = 50.0);
    keep.insert("b", Tensor::vector(b.clone()).unwrap());
    let next = run_step(&spec, &keep, &state, &x);
    for (a, b) in next.h.data().iter().zip(state.h.data()) {
        assert!((a - b).abs() < 1e-15);
    }

    let mut forget = base;
    b[..4].iter_mut().for_each(|v| *v = -50.0);
    forget.insert("b", Tensor::vector(b).unwrap());
    let next = run_step(&spec, &forget, &state, &x);
    // candidate = tanh([x, h] W_c)
    let xh: Vec<f64> = (0..2).flat_map(|r| x.row(r).iter().chain(state.h.row(r)).copied().collect::<Vec<_>>()).collect();
    let xh = Tensor::new(vec![2, 7], xh).unwrap();
    let w = forget.get("W").unwrap();
    let z = xh.matmul(w).unwrap();
    for r in 0..2 {
        for j in 0..4 {
            assert!((next.h.get(r, j) - z.get(r, 4 + j).tanh()).abs() < 1e-15);
        }
    }
}

#[test]
fn identity_rnn_applies_tanh() {
    let mut spec = CellSpec::with_defaults(CellKind::RnnId, 3, 4, 10);
    spec.layer_norm = false;
    let params = zeroed(init_params(&spec, &mut rng(1)).unwrap(), &["U", "b"]);
    let state = random_state(&spec, 2, 3);
    let next = run_step(&spec, &params, &state, &input(2, 3, 4));
    for (a, b) in next.h.data().iter().zip(state.h.data()) {
        assert_eq!(*a, b.tanh());
    }
}

#[test]
fn every_kind_passes_five_step_gradient_check() {
    let setup = GradCheckSetup::default();
    for (kind, report) in check_all_kinds(&setup, 1e-5).unwrap() {
        assert!(report.passed, "{kind}: {} at {:?}", report.max_rel_err, report.worst);
    }
}

#[test]
fn count_params_closed_forms() {
    let (d, h) = (7, 11);
    let mut rnn = CellSpec::with_defaults(CellKind::RnnOrth, d, h, 10);
    assert_eq!(count_params(&rnn), h * h + d * h + h + 2 * h);
    rnn.layer_norm = false;
    assert_eq!(count_params(&rnn), h * h + d * h + h);
    let lstm = CellSpec::with_defaults(CellKind::Lstm, d, h, 10);
    assert_eq!(count_params(&lstm), 4 * (h * h + d * h + h));
}

#[test]
fn count_params_matches_initialised_tensors() {
    for kind in CellKind::ALL {
        let spec = CellSpec::with_defaults(kind, 5, 9, 30);
        let p = init_params(&spec, &mut rng(0)).unwrap();
        assert_eq!(p.total_size(), count_params(&spec), "{kind}");
    }
    let spec = CellSpec::nru(10, 64, 64, 4).unwrap();
    assert_eq!(init_params(&spec, &mut rng(0)).unwrap().total_size(), count_params(&spec));
}

#[test]
fn match_budget_hits_copy_task_budget() {
    let spec = match_budget(CellKind::Lstm, 9, 23_500).unwrap();
    let c = count_params(&spec);
    assert!((c as f64 - 23_500.0).abs() / 23_500.0 < 0.02, "{c}");
    for kind in CellKind::ALL {
        let spec = match_budget(kind, 10, 23_500).unwrap();
        spec.validate().unwrap();
        let c = count_params(&spec);
        assert!((c as f64 - 23_500.0).abs() / 23_500.0 < 0.02, "{kind}: {c}");
    }
}

#[test]
fn match_budget_reports_unreachable_targets() {
    let err = match_budget(CellKind::Lstm, 9, 10).unwrap_err();
    assert!(err.to_string().contains("nearest"), "{err}");
}

#[test]
fn init_is_deterministic_per_seed() {
    for kind in CellKind::ALL {
        let spec = CellSpec::with_defaults(kind, 4, 9, 30);
        let a = init_params(&spec, &mut rng(11)).unwrap();
        let b = init_params(&spec, &mut rng(11)).unwrap();
        assert_eq!(a, b, "{kind}");
    }
}

#[test]
fn kind_parsing() {
    assert_eq!("nru".parse::<CellKind>().unwrap(), CellKind::Nru);
    assert_eq!("lstm-chrono".parse::<CellKind>().unwrap(), CellKind::LstmChrono);
    assert_eq!("RNN_ID".parse::<CellKind>().unwrap(), CellKind::RnnId);
    assert!("transformer".parse::<CellKind>().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn nru_directions_have_unit_five_norm(seed in 0u64..10_000, relu in any::<bool>()) {
        let mut spec = CellSpec::nru(3, 4, 16, 4).unwrap();
        spec.heads_use_relu = relu;
        let params = init_params(&spec, &mut rng(seed)).unwrap();
        let state = random_state(&spec, 3, seed + 1);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let sv = state.bind(&mut tape);
        let x = tape.leaf(input(3, 3, seed + 2));
        let (vw, ve) = nru_head_directions(&spec, &mut tape, &bound, x, sv.h, sv.m.unwrap()).unwrap();
        for v in [vw, ve] {
            for chunk in tape.value(v).data().chunks(16) {
                let norm = chunk.iter().map(|x| x.abs().powi(5)).sum::<f64>().powf(0.2);
                prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-10, "norm {}", norm);
            }
        }
    }

    #[test]
    fn nru_budget_search_respects_square_constraint(target in 2_000usize..60_000, k in prop::sample::select(vec![1usize, 4, 9])) {
        let mut template = CellSpec::with_defaults(CellKind::Nru, 10, 1, 100);
        template.num_heads = k;
        if let Ok(spec) = match_budget_like(&template, target) {
            prop_assert!(spec.validate().is_ok());
            let c = count_params(&spec) as f64;
            prop_assert!((c - target as f64).abs() / (target as f64) < 0.02);
        }
    }
}
