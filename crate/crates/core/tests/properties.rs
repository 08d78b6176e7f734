use hamflow::datagen::{write_dataset, DatasetSpec};
use hamflow::energy::EnergyFunction;
use hamflow::integrators::{leapfrog_step, rollout, IntegratorKind, IntegratorSpec};
use hamflow::models::{Checkpoint, SeparableHamiltonianModel};
use hamflow::nhf::{flow_forward, flow_inverse, FlowStack};
use hamflow::phase::PhaseState;
use hamflow::rng::RngStream;
use hamflow::systems::{System, SystemParams};
use proptest::prelude::*;

fn det2(m: [[f64; 2]; 2]) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// Central-difference Jacobian determinant of a map on `R²`.
fn fd_det(f: impl Fn(f64, f64) -> (f64, f64), x: f64, y: f64) -> f64 {
    let h = 1e-6;
    let (a, b) = f(x + h, y);
    let (c, d) = f(x - h, y);
    let (e, g) = f(x, y + h);
    let (i, j) = f(x, y - h);
    det2([[(a - c) / (2.0 * h), (e - i) / (2.0 * h)], [(b - d) / (2.0 * h), (g - j) / (2.0 * h)]])
}

fn st(q: f64, p: f64) -> PhaseState {
    PhaseState::new(vec![q], vec![p]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn leapfrog_round_trip_on_learned_models(seed in 0u64..1000, q in -2.0..2.0f64, p in -2.0..2.0f64, n in 1usize..40) {
        let m = SeparableHamiltonianModel::new(1, &[16, 16], &mut RngStream::new(seed));
        let s0 = st(q, p);
        let fwd = rollout(&m, &s0, &IntegratorSpec::new(IntegratorKind::Leapfrog, 0.125, n)).unwrap();
        let back = rollout(&m, fwd.last().unwrap(), &IntegratorSpec::new(IntegratorKind::Leapfrog, -0.125, n)).unwrap();
        prop_assert!(back.last().unwrap().max_abs_diff(&s0) < 1e-9);
    }

    #[test]
    fn leapfrog_preserves_area_for_analytic_systems(q in -2.0..2.0f64, p in -2.0..2.0f64, dt in 0.01..0.3f64) {
        for system in [System::MassSpring, System::Pendulum] {
            let h = SystemParams::defaults(system, 0.0).hamiltonian().unwrap();
            let f = |x, y| {
                let s = leapfrog_step(h.as_ref(), &st(x, y), dt).unwrap();
                (s.q()[0], s.p()[0])
            };
            prop_assert!((fd_det(f, q, p) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn flow_stack_is_invertible_and_volume_preserving(seed in 0u64..1000, q in -2.0..2.0f64, p in -2.0..2.0f64) {
        let stack = FlowStack::random(1, 2, 2, 0.15, &[8, 8], &mut RngStream::new(seed)).unwrap();
        let s = st(q, p);
        let back = flow_inverse(&stack, &flow_forward(&stack, &s).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&s) < 1e-10);
        let f = |x, y| {
            let t = flow_forward(&stack, &st(x, y)).unwrap();
            (t.q()[0], t.p()[0])
        };
        prop_assert!((fd_det(f, q, p) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn checkpoints_round_trip(seed in 0u64..1000, dim in 1usize..4, width in 1usize..12) {
        let m = SeparableHamiltonianModel::new(dim, &[width], &mut RngStream::new(seed));
        let mut bytes = Vec::new();
        m.to_checkpoint().write_to(&mut bytes).unwrap();
        let back = SeparableHamiltonianModel::from_checkpoint(&Checkpoint::read_from(&bytes[..]).unwrap()).unwrap();
        prop_assert_eq!(back.params(), m.params());
        let s = PhaseState::new(vec![0.3; dim], vec![-0.2; dim]).unwrap();
        prop_assert_eq!(back.energy(&s).unwrap(), m.energy(&s).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn datasets_regenerate_byte_for_byte(seed in 0u64..u64::MAX, system_index in 0usize..4) {
        let spec = DatasetSpec {
            n_train: 3,
            n_test: 2,
            n_steps: 5,
            render: false,
            seed,
            ..DatasetSpec::for_system(System::ALL[system_index])
        };
        let tmp = tempfile::tempdir().unwrap();
        let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
        write_dataset(&spec, &a).unwrap();
        write_dataset(&spec, &b).unwrap();
        for f in ["train/states_clean.f64", "train/states_noisy.f64", "test/states_clean.f64", "test/states_noisy.f64"] {
            prop_assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        }
    }
}
