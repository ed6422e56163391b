use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::*;
use crate::autograd::central_difference_error;
use crate::autograd::Binary;

fn small_config(n: usize) -> ModelConfig {
    ModelConfig {
        n_sensors: n,
        window: 5,
        bins: 8,
        embed_width: 4,
        lstm_width: 5,
        conv1_channels: 2,
        conv2_channels: 3,
        branch_width: 4,
        attention_prescale: false,
    }
}

fn random_values(rng: &mut ChaCha8Rng, len: usize, bound: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}

fn random_sample(cfg: &ModelConfig, rng: &mut ChaCha8Rng, label: u8) -> WindowSample {
    WindowSample {
        window: random_values(rng, cfg.window * cfg.n_sensors, 1.5),
        n_sensors: cfg.n_sensors,
        ids: (0..cfg.n_sensors).map(|_| rng.random_range(0..cfg.bins)).collect(),
        label,
        t_index: cfg.window - 1,
    }
}

fn set_param(params: &mut ModelParams, id: ParamId, values: &[f64]) {
    params.store.get_mut(id).data_mut().copy_from_slice(values);
}

fn fill(params: &mut ModelParams, id: ParamId, value: f64) {
    params.store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = value);
}

fn attention_of(x: &[f64], n: usize, d: usize, prescale: bool) -> Vec<f64> {
    let mut g = Graph::new();
    let xv = g.constant(x.to_vec(), &[n, d]).unwrap();
    let a = bilinear_attention(&mut g, xv, prescale).unwrap();
    g.value(a).to_vec()
}

#[test]
fn attention_examples() {
    assert_eq!(attention_of(&[0.0; 6], 2, 3, false), vec![0.0; 4]);
    let a = attention_of(&[1.0, 0.0, 0.0, 1.0], 2, 2, false);
    let t1 = 0.761_594_155_955_764_9;
    for (got, want) in a.iter().zip([t1, 0.0, 0.0, t1]) {
        assert!((got - want).abs() < 1e-15);
    }
    // prescale divides by the row width
    let b = attention_of(&[2.0, 0.0], 1, 2, true);
    assert!((b[0] - math::tanh(2.0)).abs() < 1e-15);
}

#[test]
fn attention_symmetric_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let n = rng.random_range(1..10);
        let d = rng.random_range(1..17);
        let a = attention_of(&random_values(&mut rng, n * d, 1.0), n, d, false);
        for i in 0..n {
            for j in 0..n {
                assert_eq!(a[i * n + j].to_bits(), a[j * n + i].to_bits());
                assert!(a[i * n + j] > -1.0 && a[i * n + j] < 1.0);
            }
        }
    }
}

#[test]
fn permutation_examples() {
    let p5 = PermutationPlan::new(5);
    assert_eq!((p5.stride, p5.pi.clone()), (3, vec![0, 3, 1, 4, 2]));
    let p8 = PermutationPlan::new(8);
    assert_eq!((p8.stride, p8.pi.clone()), (5, vec![0, 5, 2, 7, 4, 1, 6, 3]));
    assert_eq!(PermutationPlan::new(1).pi, vec![0]);
    assert_eq!(PermutationPlan::new(2).pi, vec![0, 1]);
    assert_eq!(PermutationPlan::new(6).pi, vec![0, 5, 4, 3, 2, 1]);
}

#[test]
fn permutation_bijective_and_dispersing() {
    for n in 1..=64 {
        let p = PermutationPlan::new(n);
        assert!(p.is_bijection(), "n = {n}");
        p.validate().unwrap();
        assert_eq!(gcd(p.stride, n), 1);
        assert_eq!(p.inverse().inverse(), p);
        if n >= 5 && (2..=n - 2).contains(&p.stride) {
            let min_gap = p
                .pi
                .windows(2)
                .map(|w| {
                    let d = w[0].abs_diff(w[1]);
                    d.min(n - d)
                })
                .min()
                .unwrap();
            assert!(min_gap >= 2, "n = {n}");
        }
    }
    let bad = PermutationPlan {
        n: 3,
        pi: vec![0, 0, 2],
        stride: 1,
    };
    assert!(!bad.is_bijection());
    assert!(matches!(bad.validate(), Err(Error::Schema(_))));
}

fn permuted(a: &[f64], plan: &PermutationPlan) -> Vec<f64> {
    let mut g = Graph::new();
    let av = g.constant(a.to_vec(), &[plan.n, plan.n]).unwrap();
    let p = permute_matrix(&mut g, av, plan).unwrap();
    g.value(p).to_vec()
}

/// `M·A·Mᵀ` with `M[i][pi[i]] = 1`, by explicit triple loops.
fn permutation_product(a: &[f64], plan: &PermutationPlan) -> Vec<f64> {
    let n = plan.n;
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + plan.pi[i]] = 1.0;
    }
    let mul = |x: &[f64], y: &[f64]| {
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    out[i * n + j] += x[i * n + k] * y[k * n + j];
                }
            }
        }
        out
    };
    let mut mt = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            mt[j * n + i] = m[i * n + j];
        }
    }
    mul(&mul(&m, a), &mt)
}

#[test]
fn permute_matrix_examples() {
    let a = [1.0, 2.0, 3.0, 4.0];
    assert_eq!(permuted(&a, &PermutationPlan::identity(2)), a.to_vec());
    let swap = PermutationPlan {
        n: 2,
        pi: vec![1, 0],
        stride: 1,
    };
    assert_eq!(permuted(&a, &swap), vec![4.0, 3.0, 2.0, 1.0]);

    let mut g = Graph::new();
    let av = g.constant(vec![0.0; 9], &[3, 3]).unwrap();
    assert!(matches!(permute_matrix(&mut g, av, &PermutationPlan::new(4)), Err(Error::Shape(_))));
}

#[test]
fn permute_matrix_matches_product_and_inverts() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in 1..=12 {
        let plan = PermutationPlan::new(n);
        let a = random_values(&mut rng, n * n, 1.0);
        let p = permuted(&a, &plan);
        for (x, y) in p.iter().zip(permutation_product(&a, &plan)) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(permuted(&p, &plan.inverse()), a);
    }
    // symmetric input stays symmetric
    let n = 6;
    let mut a = random_values(&mut rng, n * n, 1.0);
    for i in 0..n {
        for j in 0..i {
            a[i * n + j] = a[j * n + i];
        }
    }
    let p = permuted(&a, &PermutationPlan::new(n));
    for i in 0..n {
        for j in 0..n {
            assert_eq!(p[i * n + j], p[j * n + i]);
        }
    }
}

/// A branch plus its input matrix, all living in one store.
struct BranchFixture {
    store: ParamStore,
    x: ParamId,
    branch: BranchParams,
    plan: PermutationPlan,
}

fn branch_fixture(n: usize, d: usize, cfg: &ModelConfig, seed: u64) -> BranchFixture {
    let mut init = Initializer::new(seed);
    let mut store = ParamStore::new();
    let x = store.add("x", init.uniform(&[n, d], 1.0));
    let branch = BranchParams::init(&mut store, "b", n, d, cfg, &mut init).unwrap();
    BranchFixture {
        store,
        x,
        branch,
        plan: PermutationPlan::new(n),
    }
}

fn branch_value(f: &BranchFixture) -> Vec<f64> {
    let mut s = Session::new(&f.store);
    let x = s.param(f.x);
    let v = relation_branch(&mut s, x, &f.branch, &f.plan, false).unwrap();
    s.graph.value(v).to_vec()
}

/// Max relative error over every coordinate of every array in the store for
/// the scalar built by `build`.
fn store_grad_check<F>(store: &ParamStore, build: F) -> f64
where
    F: Fn(&mut Session<'_>) -> Result<Var>,
{
    let mut s = Session::new(store);
    let out = build(&mut s).unwrap();
    s.backward(out).unwrap();
    let grads = s.into_grads();
    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for (id, _, t) in store.iter() {
        let analytic = grads
            .iter()
            .find(|(g, _)| *g == id)
            .map(|(_, g)| g.clone())
            .unwrap_or_else(|| vec![0.0; t.len()]);
        let eval = |x: &[f64]| -> Result<f64> {
            probe.get_mut(id).data_mut().copy_from_slice(x);
            let mut s = Session::new(&probe);
            let out = build(&mut s)?;
            Ok(s.graph.scalar(out))
        };
        let err = central_difference_error(&analytic, eval, t.data(), 1e-5, 0..t.len()).unwrap();
        probe.get_mut(id).data_mut().copy_from_slice(t.data());
        worst = worst.max(err);
    }
    worst
}

/// `sum(w ⊙ v)` for fixed pseudo-random weights, so every output entry
/// contributes a distinct amount.
fn weighted_sum(g: &mut Graph, v: Var) -> Result<Var> {
    let n = g.value(v).len();
    let w = (0..n).map(|i| 0.3 + 0.7 * math::sin(i as f64 + 1.0)).collect();
    let shape = g.shape(v).to_vec();
    let w = g.constant(w, &shape)?;
    let p = g.binary(Binary::Mul, v, w)?;
    g.reduce(Reduce::Sum, p)
}

#[test]
fn branch_zero_input_gives_zero() {
    let cfg = ModelConfig::new(4);
    let mut f = branch_fixture(4, 16, &cfg, 3);
    f.store.get_mut(f.x).data_mut().iter_mut().for_each(|v| *v = 0.0);
    assert!(branch_value(&f).iter().all(|&v| v == 0.0));
    assert_eq!(branch_value(&f).len(), cfg.branch_width);
}

#[test]
fn branch_gating() {
    let cfg = ModelConfig::new(5);
    let mut f = branch_fixture(5, 16, &cfg, 4);
    let (gamma, delta) = (f.branch.gamma, f.branch.delta);
    let with = |f: &mut BranchFixture, gv: f64, dv: f64| {
        f.store.get_mut(gamma).data_mut()[0] = gv;
        f.store.get_mut(delta).data_mut()[0] = dv;
        branch_value(f)
    };
    let cnn = with(&mut f, 1.0, 0.0);
    let res = with(&mut f, 0.0, 1.0);
    let mixed = with(&mut f, 0.7, -0.4);
    for i in 0..cnn.len() {
        assert!((mixed[i] - (0.7 * cnn[i] - 0.4 * res[i])).abs() < 1e-12);
    }
    assert_ne!(cnn, res);

    // with delta = 0 the residual weights are irrelevant, and vice versa
    with(&mut f, 1.0, 0.0);
    let first_mlp = f.branch.residual_mlp.layers[0].weight;
    f.store.get_mut(first_mlp).data_mut()[0] += 1.0;
    assert_eq!(branch_value(&f), cnn);
    with(&mut f, 0.0, 1.0);
    let conv = f.branch.conv_p.conv1.kernel;
    f.store.get_mut(conv).data_mut()[0] += 1.0;
    f.store.get_mut(first_mlp).data_mut()[0] -= 1.0;
    assert_eq!(branch_value(&f), res);
}

#[test]
fn branch_gradient_6x16() {
    let cfg = ModelConfig::new(6);
    for seed in 0..3 {
        let f = branch_fixture(6, 16, &cfg, 10 + seed);
        let err = store_grad_check(&f.store, |s| {
            let x = s.param(f.x);
            let v = relation_branch(s, x, &f.branch, &f.plan, false)?;
            weighted_sum(&mut s.graph, v)
        });
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn branch_handles_small_and_odd_sides() {
    let cfg = small_config(1);
    for n in [1, 2, 3, 5, 7] {
        let f = branch_fixture(n, 3, &cfg, n as u64);
        assert_eq!(branch_value(&f).len(), cfg.branch_width);
        let err = store_grad_check(&f.store, |s| {
            let x = s.param(f.x);
            let v = relation_branch(s, x, &f.branch, &f.plan, true)?;
            weighted_sum(&mut s.graph, v)
        });
        assert!(err < 1e-4, "n = {n}: {err}");
    }
}

#[test]
fn init_is_seed_determined() {
    let cfg = small_config(3);
    let a = ModelParams::init(&cfg, 7).unwrap();
    let b = ModelParams::init(&cfg, 7).unwrap();
    assert_eq!(a, b);
    let c = ModelParams::init(&cfg, 8).unwrap();
    assert!(a.store.iter().zip(c.store.iter()).any(|((_, _, x), (_, _, y))| x.data() != y.data()));

    for (_, name, t) in a.store.iter() {
        if name.starts_with("embed.") {
            assert!(t.data().iter().all(|v| v.abs() < EmbeddingTable::INIT_BOUND));
        }
        if name.ends_with(".b_f") {
            assert!(t.data().iter().all(|&v| v == LstmParams::FORGET_BIAS));
        }
        if name.ends_with("bias") || name.ends_with(".b_i") || name.ends_with(".b_o") {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
        if ["alpha", "beta"].contains(&name) || name.ends_with("gamma") || name.ends_with("delta") {
            assert_eq!(t.data(), &[FUSION_INIT]);
        }
    }

    let mut bad = cfg.clone();
    bad.window = 1;
    assert!(matches!(ModelParams::init(&bad, 0), Err(Error::Config(_))));
    bad = cfg.clone();
    bad.lstm_width = 0;
    assert!(matches!(ModelParams::init(&bad, 0), Err(Error::Config(_))));
}

#[test]
fn from_arrays_round_trip_and_errors() {
    let cfg = small_config(3);
    let p = ModelParams::init(&cfg, 5).unwrap();
    let arrays: Vec<(String, Vec<usize>, Vec<f64>)> = p
        .store
        .iter()
        .map(|(_, n, t)| (n.into(), t.shape().to_vec(), t.data().to_vec()))
        .collect();
    let view = || arrays.iter().map(|(n, s, d)| (n.as_str(), s.as_slice(), d.clone()));
    assert_eq!(ModelParams::from_arrays(&cfg, view()).unwrap(), p);

    let missing = arrays.iter().skip(1).map(|(n, s, d)| (n.as_str(), s.as_slice(), d.clone()));
    assert!(matches!(ModelParams::from_arrays(&cfg, missing), Err(Error::Schema(_))));

    let extra = view().chain(core::iter::once(("bogus", &[1usize][..], vec![0.0])));
    assert!(matches!(ModelParams::from_arrays(&cfg, extra), Err(Error::Schema(_))));

    let wrong = arrays.iter().map(|(n, s, d)| {
        if n == "head.weight" {
            (n.as_str(), &[2usize, 2][..], vec![0.0; 4])
        } else {
            (n.as_str(), s.as_slice(), d.clone())
        }
    });
    assert!(matches!(ModelParams::from_arrays(&cfg, wrong), Err(Error::Shape(_))));
}

#[test]
fn multi_sensor_branch_behaviour() {
    let cfg = small_config(4);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let params = ModelParams::init(&cfg, 1).unwrap();
    let plan = params.plan();
    let run = |params: &ModelParams, ids: &[usize]| {
        let mut s = Session::new(&params.store);
        let v = multi_sensor_forward(&mut s, params, ids, &plan).unwrap();
        s.graph.value(v).to_vec()
    };
    let ids: Vec<usize> = (0..4).map(|_| rng.random_range(0..cfg.bins)).collect();
    let v1 = run(&params, &ids);
    assert_eq!(v1, run(&params, &ids));
    let mut other = ids.clone();
    other[2] = (other[2] + 1) % cfg.bins;
    assert_ne!(v1, run(&params, &other));

    let mut zeroed = params.clone();
    for t in &zeroed.embeddings.clone() {
        fill(&mut zeroed, t.table, 0.0);
    }
    assert!(run(&zeroed, &ids).iter().all(|&v| v == 0.0));

    let mut s = Session::new(&params.store);
    let err = multi_sensor_forward(&mut s, &params, &[0, 0, cfg.bins, 0], &plan).unwrap_err();
    assert!(matches!(err, Error::Lookup { feature: 2, .. }));
}

fn time_series_rows(params: &ModelParams, window: &[f64]) -> Vec<f64> {
    let mut s = Session::new(&params.store);
    let et = time_series_features(&mut s, params, window).unwrap();
    s.graph.value(et).to_vec()
}

#[test]
fn time_series_branch_behaviour() {
    let cfg = small_config(4);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = ModelParams::init(&cfg, 2).unwrap();
    let plan = params.plan();

    // zero input weights on a zero window give Et = 0 and v_ts = 0
    let mut zeroed = params.clone();
    for l in zeroed.lstms.clone() {
        for id in l.w {
            fill(&mut zeroed, id, 0.0);
        }
    }
    let zeros = vec![0.0; cfg.window * cfg.n_sensors];
    assert!(time_series_rows(&zeroed, &zeros).iter().all(|&v| v == 0.0));
    let mut s = Session::new(&zeroed.store);
    let v = time_series_forward(&mut s, &zeroed, &zeros, &plan).unwrap();
    assert!(s.graph.value(v).iter().all(|&v| v == 0.0));

    // sensors carry their own LSTM: reordering columns and LSTMs together
    // reorders the rows of Et
    let window = random_values(&mut rng, cfg.window * cfg.n_sensors, 1.0);
    let et = time_series_rows(&params, &window);
    let order = [2, 0, 3, 1];
    let n = cfg.n_sensors;
    let mut swapped_window = vec![0.0; window.len()];
    for t in 0..cfg.window {
        for (k, &src) in order.iter().enumerate() {
            swapped_window[t * n + k] = window[t * n + src];
        }
    }
    let mut swapped = params.clone();
    swapped.lstms = order.iter().map(|&k| params.lstms[k]).collect();
    let et2 = time_series_rows(&swapped, &swapped_window);
    let l = cfg.lstm_width;
    for (k, &src) in order.iter().enumerate() {
        assert_eq!(et2[k * l..(k + 1) * l], et[src * l..(src + 1) * l]);
    }

    let mut bad = window.clone();
    bad[3] = f64::NAN;
    let mut s = Session::new(&params.store);
    assert!(matches!(time_series_forward(&mut s, &params, &bad, &plan), Err(Error::Data(_))));
    assert!(matches!(
        time_series_forward(&mut s, &params, &window[1..], &plan),
        Err(Error::Shape(_))
    ));
}

#[test]
fn model_forward_gating() {
    let cfg = small_config(3);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut params = ModelParams::init(&cfg, 3).unwrap();
    let plan = params.plan();
    let a = random_sample(&cfg, &mut rng, 0);
    let b = random_sample(&cfg, &mut rng, 1);
    let p = model_forward(&params, &a, &plan).unwrap();
    assert!(p > 0.0 && p < 1.0);
    assert_eq!(p.to_bits(), model_forward(&params, &a, &plan).unwrap().to_bits());

    let id = params.alpha;
    fill(&mut params, id, 0.0);
    let id = params.beta;
    fill(&mut params, id, 0.0);
    let id = params.head.bias;
    set_param(&mut params, id, &[0.3]);
    let want = 1.0 / (1.0 + math::exp(-0.3));
    for s in [&a, &b] {
        assert!((model_forward(&params, s, &plan).unwrap() - want).abs() < 1e-15);
    }

    let mut params = ModelParams::init(&cfg, 3).unwrap();
    let id = params.head.weight;
    fill(&mut params, id, 0.0);
    let id = params.head.bias;
    fill(&mut params, id, 0.0);
    assert_eq!(model_forward(&params, &a, &plan).unwrap(), 0.5);

    let mut wrong = a.clone();
    wrong.ids.pop();
    assert!(matches!(model_forward(&params, &wrong, &plan), Err(Error::Shape(_))));
}

#[test]
fn branch_only_consistency() {
    let cfg = small_config(3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut params = ModelParams::init(&cfg, 4).unwrap();
    let plan = params.plan();
    let sample = random_sample(&cfg, &mut rng, 1);

    let id = params.alpha;
    fill(&mut params, id, 1.0);
    let id = params.beta;
    fill(&mut params, id, 0.0);
    let ms = branch_only_forward(&params, &sample, &plan, Variant::MultiSensor).unwrap();
    let full = model_forward(&params, &sample, &plan).unwrap();
    assert!((ms - full).abs() < 1e-15);

    let id = params.alpha;
    fill(&mut params, id, 0.0);
    let id = params.beta;
    fill(&mut params, id, 1.0);
    let ts = branch_only_forward(&params, &sample, &plan, Variant::TimeSeries).unwrap();
    assert!((ts - model_forward(&params, &sample, &plan).unwrap()).abs() < 1e-15);
    assert!(branch_only_forward(&params, &sample, &plan, Variant::Full).is_err());

    // same last frame, different history
    let params = ModelParams::init(&cfg, 4).unwrap();
    let mut other = sample.clone();
    let n = cfg.n_sensors;
    for v in other.window[..(cfg.window - 1) * n].iter_mut() {
        *v = -*v + 0.25;
    }
    assert_eq!(other.last_frame(), sample.last_frame());
    let p1 = branch_only_forward(&params, &sample, &plan, Variant::TimeSeries).unwrap();
    let p2 = branch_only_forward(&params, &other, &plan, Variant::TimeSeries).unwrap();
    assert_ne!(p1, p2);
    let m1 = branch_only_forward(&params, &sample, &plan, Variant::MultiSensor).unwrap();
    let m2 = branch_only_forward(&params, &other, &plan, Variant::MultiSensor).unwrap();
    assert_eq!(m1, m2);
    for p in [p1, p2, m1, m2, model_forward(&params, &other, &plan).unwrap()] {
        assert!(p > 0.0 && p < 1.0);
    }
}

#[test]
fn restrict_to_freezes_other_branch() {
    let cfg = small_config(3);
    let mut params = ModelParams::init(&cfg, 1).unwrap();
    params.restrict_to(Variant::TimeSeries);
    for (_, name, t) in params.store.iter() {
        let ms = name.starts_with("embed.") || name.starts_with("ms.") || name == "alpha";
        assert_eq!(t.requires_grad(), !ms, "{name}");
    }
    params.restrict_to(Variant::Full);
    assert!(params.store.iter().all(|(_, _, t)| t.requires_grad()));
}

#[test]
fn full_model_gradient_every_array() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for seed in 0..5 {
        let cfg = small_config(3 + seed as usize % 3);
        let params = ModelParams::init(&cfg, seed).unwrap();
        let sample = random_sample(&cfg, &mut rng, (seed % 2) as u8);
        for variant in Variant::ALL {
            let report = loss_grad_check(&params, &sample, variant, 1e-5, usize::MAX, seed).unwrap();
            for r in &report {
                assert!(r.max_rel_error < 1e-4, "seed {seed} {variant:?} {}: {}", r.name, r.max_rel_error);
                assert_eq!(r.probed, params.store.get(params.store.find(&r.name).unwrap()).len());
            }
            let expected = params.store.iter().filter(|(_, n, _)| variant.uses(n)).count();
            assert_eq!(report.len(), expected);
        }
    }
}

#[test]
fn sampled_gradient_check_probes_nonzero_entries() {
    let cfg = small_config(3);
    let params = ModelParams::init(&cfg, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let sample = random_sample(&cfg, &mut rng, 1);
    let report = loss_grad_check(&params, &sample, Variant::Full, 1e-5, 6, 0).unwrap();
    for r in &report {
        assert!(r.probed <= 6);
        assert!(r.max_rel_error < 1e-4, "{}: {}", r.name, r.max_rel_error);
    }
}

#[test]
fn bce_difference_matches_loss_difference() {
    use crate::train::bce_loss;
    for (z1, z0) in [(0.3, -1.2), (-4.0, 2.5), (12.0, 11.0), (-30.0, -29.5)] {
        for y in [0.0, 1.0] {
            let direct = bce_loss(z1, y) - bce_loss(z0, y);
            assert!((bce_difference(z1, z0, y) - direct).abs() < 1e-12, "{z1} {z0} {y}");
        }
    }
    // far below one ulp of the loss, the difference still follows the slope
    let (z0, dz): (f64, f64) = (0.4, 1e-12);
    for y in [0.0, 1.0] {
        let slope = 1.0 / (1.0 + (-z0).exp()) - y;
        let d = bce_difference(z0 + dz, z0, y);
        assert!((d / (dz * slope) - 1.0).abs() < 1e-3, "{d}");
    }
}
