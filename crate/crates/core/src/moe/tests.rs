#![allow(clippy::needless_range_loop, clippy::type_complexity)] // oracle code stays naive

use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rvec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn gates_from(rows: &[&[f64]]) -> Matrix {
    Matrix {
        rows: rows.len(),
        cols: rows[0].len(),
        data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
    }
}

#[test]
fn route_zero_distance_takes_full_weight() {
    let gates = gates_from(&[&[1.0, 1.0], &[2.0, 0.0], &[0.0, 3.0], &[4.0, 4.0]]);
    let d = route(0, &[4.0, 4.0], &gates, 1).unwrap();
    assert_eq!(d.selected, vec![3]);
    assert_eq!(d.weights, vec![1.0]);
    assert_eq!(d.distances, vec![0.0]);
}

#[test]
fn route_matches_direct_formula() {
    // distances from the origin: 1, 2, 3, 4
    let gates = gates_from(&[&[1.0, 0.0], &[0.0, 2.0], &[3.0, 0.0], &[0.0, 4.0]]);
    let d = route(7, &[0.0, 0.0], &gates, 2).unwrap();
    assert_eq!(d.token_index, 7);
    assert_eq!(d.selected, vec![0, 1]);
    assert_eq!(d.distances, vec![1.0, 2.0]);
    let w0 = (-1.0f64).exp() / ((-1.0f64).exp() + (-2.0f64).exp());
    assert!((d.weights[0] - w0).abs() < 1e-12);
    assert!((d.weights[1] - (1.0 - w0)).abs() < 1e-12);
    assert!((d.weights[0] - 0.7311).abs() < 1e-4);
    assert!((d.weights[1] - 0.2689).abs() < 1e-4);
}

#[test]
fn route_breaks_ties_toward_lower_index() {
    let gates = gates_from(&[&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 1.0], &[0.0, -1.0]]);
    let d = route(0, &[0.0, 0.0], &gates, 2).unwrap();
    assert_eq!(d.selected, vec![0, 1]);
    assert_eq!(d.weights, vec![0.5, 0.5]);
}

#[test]
fn route_rejects_non_finite() {
    let gates = gates_from(&[&[0.0, 0.0], &[1.0, 1.0]]);
    assert!(matches!(route(0, &[f64::NAN, 0.0], &gates, 1), Err(Error::NonFinite(_))));
}

#[test]
fn route_weights_are_positive_and_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let gates = Matrix { rows: 6, cols: 5, data: rvec(&mut rng, 30) };
        let c = rvec(&mut rng, 5);
        let d = route(0, &c, &gates, 3).unwrap();
        assert_eq!(d.selected.len(), 3);
        assert!(d.weights.iter().all(|&w| w > 0.0));
        assert!((d.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // selected distances are the k smallest overall
        let mut all: Vec<f64> = (0..6)
            .map(|i| {
                c.iter()
                    .zip(gates.row(i))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut sel = d.distances.clone();
        sel.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (s, a) in sel.iter().zip(&all[..3]) {
            assert_eq!(s, a);
        }
    }
}

#[test]
fn translation_invariance_exact_on_dyadic_inputs() {
    // dyadic values add exactly, so the decision is bitwise identical
    let gates = gates_from(&[&[0.25, 0.5], &[1.5, -0.75], &[-2.0, 0.25], &[3.25, 1.0]]);
    let c = [0.75, -1.25];
    let t = [2.5, -3.75];
    let shifted_gates = Matrix {
        rows: 4,
        cols: 2,
        data: gates.data.iter().enumerate().map(|(i, v)| v + t[i % 2]).collect(),
    };
    let shifted_c: Vec<f64> = c.iter().zip(&t).map(|(a, b)| a + b).collect();
    let before = route(0, &c, &gates, 2).unwrap();
    let after = route(0, &shifted_c, &shifted_gates, 2).unwrap();
    assert_eq!(before, after);
}

#[test]
fn translation_and_orthogonal_invariance_within_tolerance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let dim = rng.gen_range(2..6);
        let s = rng.gen_range(2..6);
        let k = rng.gen_range(1..=s);
        let gates = Matrix { rows: s, cols: dim, data: rvec(&mut rng, s * dim) };
        let c = rvec(&mut rng, dim);
        let base = route(0, &c, &gates, k).unwrap();

        // translation
        let t = rvec(&mut rng, dim);
        let gt = Matrix {
            rows: s,
            cols: dim,
            data: gates.data.iter().enumerate().map(|(i, v)| v + t[i % dim]).collect(),
        };
        let ct: Vec<f64> = c.iter().zip(&t).map(|(a, b)| a + b).collect();
        let shifted = route(0, &ct, &gt, k).unwrap();
        assert_eq!(base.selected, shifted.selected);
        for (a, b) in base.weights.iter().zip(&shifted.weights) {
            assert!((a - b).abs() < 1e-9);
        }

        // Householder reflection H = I − 2vvᵀ/‖v‖²
        let v = rvec(&mut rng, dim);
        let vv: f64 = v.iter().map(|x| x * x).sum();
        let reflect = |x: &[f64]| -> Vec<f64> {
            let dot: f64 = x.iter().zip(&v).map(|(a, b)| a * b).sum();
            x.iter().zip(&v).map(|(a, b)| a - 2.0 * dot / vv * b).collect()
        };
        let gr = Matrix {
            rows: s,
            cols: dim,
            data: (0..s).flat_map(|i| reflect(gates.row(i))).collect(),
        };
        let rotated = route(0, &reflect(&c), &gr, k).unwrap();
        assert_eq!(base.selected, rotated.selected);
        for (a, b) in base.weights.iter().zip(&rotated.weights) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn routing_is_piecewise_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let gates = Matrix { rows: 5, cols: 4, data: rvec(&mut rng, 20) };
        let c = rvec(&mut rng, 4);
        let k = 2;
        let base = route(0, &c, &gates, k).unwrap();
        // gap between the k-th and (k+1)-th smallest distances
        let mut all: Vec<f64> = (0..5)
            .map(|i| {
                c.iter()
                    .zip(gates.row(i))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let gap = all[k] - all[k - 1];
        if gap < 1e-6 {
            continue;
        }
        let eps = gap / 2.0 * 0.9 / (4.0f64).sqrt(); // per-coordinate bound
        let c2: Vec<f64> = c.iter().enumerate().map(|(i, v)| v + if i % 2 == 0 { eps } else { -eps }).collect();
        let moved = route(0, &c2, &gates, k).unwrap();
        assert_eq!(base.selected, moved.selected);
    }
}

// ── moe_forward ─────────────────────────────────────────────────────

/// Experts that compute the identity via relu(x·[I|−I])·[I;−I]ᵀ.
fn identity_expert(tape: &mut Tape, d: usize) -> ExpertFfn {
    let mut w1 = vec![0.0; d * 2 * d];
    let mut w2 = vec![0.0; 2 * d * d];
    for i in 0..d {
        w1[i * 2 * d + i] = 1.0;
        w1[i * 2 * d + d + i] = -1.0;
        w2[i * d + i] = 1.0;
        w2[(d + i) * d + i] = -1.0;
    }
    ExpertFfn {
        w1: tape.constant(w1, vec![d, 2 * d]),
        b1: tape.constant(vec![0.0; 2 * d], vec![2 * d]),
        w2: tape.constant(w2, vec![2 * d, d]),
        b2: tape.constant(vec![0.0; d], vec![d]),
    }
}

fn random_layer(tape: &mut Tape, rng: &mut ChaCha8Rng, s: usize, d: usize, hidden: usize) -> MoeLayer {
    let gate = tape.leaf(rvec(rng, s * d), vec![s, d], true);
    let experts = (0..s)
        .map(|_| ExpertFfn {
            w1: tape.leaf(rvec(rng, d * hidden), vec![d, hidden], true),
            b1: tape.leaf(rvec(rng, hidden), vec![hidden], true),
            w2: tape.leaf(rvec(rng, hidden * d), vec![hidden, d], true),
            b2: tape.leaf(rvec(rng, d), vec![d], true),
        })
        .collect();
    MoeLayer { gate, experts }
}

#[test]
fn identity_experts_pass_tokens_through() {
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = 3;
    let gate = tape.constant(rvec(&mut rng, 4 * d), vec![4, d]);
    let experts = (0..4).map(|_| identity_expert(&mut tape, d)).collect();
    let layer = MoeLayer { gate, experts };
    let tokens = tape.constant(rvec(&mut rng, 5 * d), vec![5, d]);
    let cfg = MoeConfig { num_experts: 4, top_k: 2, d_model: d, expert_hidden: 2 * d, enabled: true };
    let out = moe_forward(&mut tape, tokens, &layer, &cfg).unwrap();
    for (a, b) in tape.data(out.output).iter().zip(tape.data(tokens)) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(out.decisions.len(), 5);
    for d in &out.decisions {
        assert_eq!(d.selected.len(), 2);
    }
}

#[test]
fn dense_mixture_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let (s, d, hidden) = (4, 3, 5);
        let mut tape = Tape::new();
        let layer = random_layer(&mut tape, &mut rng, s, d, hidden);
        let tokens_data = rvec(&mut rng, 2 * d);
        let tokens = tape.constant(tokens_data.clone(), vec![2, d]);
        let cfg = MoeConfig { num_experts: s, top_k: s, d_model: d, expert_hidden: hidden, enabled: true };

        // brute force with plain math, independent of the tape path
        let gate_data = tape.data(layer.gate).to_vec();
        let expert_params: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> = layer
            .experts
            .iter()
            .map(|e| {
                (
                    tape.data(e.w1).to_vec(),
                    tape.data(e.b1).to_vec(),
                    tape.data(e.w2).to_vec(),
                    tape.data(e.b2).to_vec(),
                )
            })
            .collect();
        let out = moe_forward(&mut tape, tokens, &layer, &cfg).unwrap();

        for t in 0..2 {
            let c = &tokens_data[t * d..(t + 1) * d];
            let dists: Vec<f64> = (0..s)
                .map(|i| {
                    c.iter()
                        .zip(&gate_data[i * d..(i + 1) * d])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            let dmin = dists.iter().cloned().fold(f64::INFINITY, f64::min);
            let exps: Vec<f64> = dists.iter().map(|&x| (-(x - dmin)).exp()).collect();
            let z: f64 = exps.iter().sum();
            let mut expect = vec![0.0; d];
            for i in 0..s {
                let (w1, b1, w2, b2) = &expert_params[i];
                let mut h = vec![0.0; hidden];
                for j in 0..hidden {
                    h[j] = (b1[j]
                        + (0..d).map(|p| c[p] * w1[p * hidden + j]).sum::<f64>())
                    .max(0.0);
                }
                for j in 0..d {
                    let e_out =
                        b2[j] + (0..hidden).map(|p| h[p] * w2[p * d + j]).sum::<f64>();
                    expect[j] += exps[i] / z * e_out;
                }
            }
            for (a, b) in tape.data(out.output)[t * d..(t + 1) * d].iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn constant_experts_give_convex_combination() {
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let d = 3;
    let gate = tape.constant(rvec(&mut rng, 4 * d), vec![4, d]);
    // expert i outputs the constant vector v_i (zero weights, bias v_i)
    let consts: Vec<Vec<f64>> = (0..4).map(|_| rvec(&mut rng, d)).collect();
    let experts = consts
        .iter()
        .map(|v| ExpertFfn {
            w1: tape.constant(vec![0.0; d * 2], vec![d, 2]),
            b1: tape.constant(vec![0.0; 2], vec![2]),
            w2: tape.constant(vec![0.0; 2 * d], vec![2, d]),
            b2: tape.constant(v.clone(), vec![d]),
        })
        .collect();
    let layer = MoeLayer { gate, experts };
    let tokens = tape.constant(rvec(&mut rng, d), vec![1, d]);
    let cfg = MoeConfig { num_experts: 4, top_k: 2, d_model: d, expert_hidden: 2, enabled: true };
    let out = moe_forward(&mut tape, tokens, &layer, &cfg).unwrap();
    let decision = &out.decisions[0];
    let z = tape.data(out.output);
    for j in 0..d {
        let expect: f64 = decision
            .selected
            .iter()
            .zip(&decision.weights)
            .map(|(&i, &w)| w * consts[i][j])
            .sum();
        assert!((z[j] - expect).abs() < 1e-12);
        // inside the simplex spanned by the selected constants
        let lo = decision.selected.iter().map(|&i| consts[i][j]).fold(f64::INFINITY, f64::min);
        let hi = decision.selected.iter().map(|&i| consts[i][j]).fold(f64::NEG_INFINITY, f64::max);
        assert!(z[j] >= lo - 1e-12 && z[j] <= hi + 1e-12);
    }
}

#[test]
fn disabled_layer_is_the_identity() {
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let layer = random_layer(&mut tape, &mut rng, 4, 3, 5);
    let tokens = tape.constant(rvec(&mut rng, 2 * 3), vec![2, 3]);
    let cfg = MoeConfig { num_experts: 4, top_k: 2, d_model: 3, expert_hidden: 5, enabled: false };
    let out = moe_forward(&mut tape, tokens, &layer, &cfg).unwrap();
    assert_eq!(out.output, tokens);
    assert!(out.decisions.is_empty());
}

#[test]
fn gradients_flow_through_gates_and_experts() {
    // finite differences at a routing-stable point
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (s, d, hidden) = (4, 3, 4);
    let gate_data = rvec(&mut rng, s * d);
    let tokens_data = rvec(&mut rng, 2 * d);
    let expert_data: Vec<Vec<f64>> = (0..s)
        .map(|_| {
            let mut v = rvec(&mut rng, d * hidden);
            v.extend(rvec(&mut rng, hidden));
            v.extend(rvec(&mut rng, hidden * d));
            v.extend(rvec(&mut rng, d));
            v
        })
        .collect();

    let build = |tape: &mut Tape, gate_data: &[f64]| {
        let gate = tape.leaf(gate_data.to_vec(), vec![s, d], true);
        let experts: Vec<ExpertFfn> = expert_data
            .iter()
            .map(|v| {
                let (a, rest) = v.split_at(d * hidden);
                let (b, rest2) = rest.split_at(hidden);
                let (c, e) = rest2.split_at(hidden * d);
                ExpertFfn {
                    w1: tape.leaf(a.to_vec(), vec![d, hidden], true),
                    b1: tape.leaf(b.to_vec(), vec![hidden], true),
                    w2: tape.leaf(c.to_vec(), vec![hidden, d], true),
                    b2: tape.leaf(e.to_vec(), vec![d], true),
                }
            })
            .collect();
        let layer = MoeLayer { gate, experts };
        let tokens = tape.constant(tokens_data.clone(), vec![2, d]);
        let cfg = MoeConfig { num_experts: s, top_k: 2, d_model: d, expert_hidden: hidden, enabled: true };
        let out = moe_forward(tape, tokens, &layer, &cfg).unwrap();
        let probe = tape.constant((0..2 * d).map(|i| (i as f64 * 0.7).cos()).collect(), vec![2, d]);
        let y = tape.mul(out.output, probe).unwrap();
        (tape.sum_all(y), gate, layer.experts[out.decisions[0].selected[0]].w1, out.decisions)
    };

    let mut tape = Tape::new();
    let (loss, gate, w1_first, decisions) = build(&mut tape, &gate_data);
    tape.backward(loss).unwrap();
    let analytic = tape.grad(gate).unwrap().to_vec();
    let h = 1e-5;
    for idx in 0..s * d {
        let mut plus = gate_data.clone();
        plus[idx] += h;
        let mut minus = gate_data.clone();
        minus[idx] -= h;
        let mut tp = Tape::new();
        let (lp, _, _, dp) = build(&mut tp, &plus);
        let mut tm = Tape::new();
        let (lm, _, _, dm) = build(&mut tm, &minus);
        // probe: selection must not flip under the perturbation
        for (a, b) in dp.iter().zip(&dm) {
            assert_eq!(a.selected, b.selected, "routing flipped; not a stable point");
        }
        for (a, b) in dp.iter().zip(&decisions) {
            assert_eq!(a.selected, b.selected);
        }
        let numeric = (tp.value(lp) - tm.value(lm)) / (2.0 * h);
        let denom = analytic[idx].abs().max(numeric.abs());
        if denom > 1e-8 {
            assert!(
                (analytic[idx] - numeric).abs() / denom < 1e-4,
                "gate[{idx}]: {} vs {numeric}",
                analytic[idx]
            );
        }
    }
    assert!(tape.grad(w1_first).unwrap().iter().any(|&v| v != 0.0));
}

// ── usage report ────────────────────────────────────────────────────

fn decision(selected: Vec<usize>) -> GateDecision {
    let k = selected.len();
    GateDecision {
        token_index: 0,
        selected,
        weights: vec![1.0 / k as f64; k],
        distances: vec![1.0; k],
    }
}

#[test]
fn usage_single_decision_fills_two_cells() {
    let d = decision(vec![0, 1]);
    let table = expert_usage_report([(TaskKind::Count, &d)], 4);
    let nonzero: usize = table.counts.iter().flatten().filter(|&&v| v > 0).count();
    assert_eq!(nonzero, 2);
    assert_eq!(table.counts[0][TaskKind::Count.index()], 1);
    assert_eq!(table.counts[1][TaskKind::Count.index()], 1);
}

#[test]
fn usage_total_is_k_times_tokens() {
    let ds: Vec<GateDecision> = (0..25).map(|i| decision(vec![i % 4, (i + 1) % 4])).collect();
    let items: Vec<(TaskKind, &GateDecision)> =
        ds.iter().enumerate().map(|(i, d)| (TaskKind::ALL[i % 4], d)).collect();
    let table = expert_usage_report(items, 4);
    assert_eq!(table.total(), 2 * 25);
}

#[test]
fn usage_uniform_routing_is_roughly_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 10_000;
    let ds: Vec<(TaskKind, GateDecision)> = (0..n)
        .map(|_| {
            let a = rng.gen_range(0..4usize);
            let mut b = rng.gen_range(0..3usize);
            if b >= a {
                b += 1;
            }
            let mut sel = vec![a, b];
            sel.sort();
            (TaskKind::ALL[rng.gen_range(0..4)], decision(sel))
        })
        .collect();
    let table = expert_usage_report(ds.iter().map(|(t, d)| (*t, d)), 4);
    let max = table.counts.iter().flatten().max().unwrap();
    let min = table.counts.iter().flatten().min().unwrap();
    assert!((*max as f64) / (*min as f64) < 2.0, "max {max} min {min}");
}
