//! Property tests for the fluid-state invariants.

use proptest::prelude::*;

use jiq_core::fluid::{
    deriv_early_threshold, deriv_jiq_random, deriv_lcfs, euler_integrate, from_tail, to_tail,
    FluidState, IntegrationSettings, TailState,
};

const I_MAX: usize = 8;
const C_MAX: usize = 7;

/// Arbitrary normalized fluid state with empty top-two truncation slots, so
/// telescoping sums see no boundary.
fn fluid_state_strategy() -> impl Strategy<Value = FluidState> {
    let q = proptest::collection::vec(0.0_f64..1.0, I_MAX - 1);
    let s = proptest::collection::vec(0.0_f64..1.0, (C_MAX - 1) * (I_MAX - 2));
    let s_nil = proptest::collection::vec(0.0_f64..1.0, C_MAX - 2);
    (q, s, s_nil).prop_filter_map("nonzero masses", |(q, s, s_nil)| {
        let mut st = FluidState::zeroed(I_MAX, C_MAX);
        let q_total: f64 = q.iter().sum();
        let s_total: f64 = s.iter().sum::<f64>() + s_nil.iter().sum::<f64>();
        if q_total < 1e-3 || s_total < 1e-3 {
            return None;
        }
        for (i, v) in q.iter().enumerate() {
            st.q[i] = v / q_total;
        }
        let mut k = 0;
        for i in 0..C_MAX - 1 {
            for j in 1..=I_MAX - 2 {
                st.set_s(i, j, s[k] / s_total);
                k += 1;
            }
        }
        for (i, v) in s_nil.iter().enumerate() {
            st.set_s_nil(i + 1, v / s_total);
        }
        Some(st)
    })
}

proptest! {
    #[test]
    fn tail_round_trip_is_identity(st in fluid_state_strategy()) {
        let back = from_tail(&to_tail(&st));
        for (a, b) in back.q.iter().zip(&st.q) {
            prop_assert!((a - b).abs() <= 1e-15);
        }
        prop_assert_eq!(&back.s, &st.s);
        prop_assert_eq!(&back.s_nil, &st.s_nil);
    }

    #[test]
    fn derivatives_conserve_mass(
        st in fluid_state_strategy(),
        lambda in 0.05_f64..0.99,
        r in 0.5_f64..20.0,
        z in 0u32..3,
    ) {
        for d in [
            deriv_jiq_random(&st, lambda, r).unwrap(),
            deriv_early_threshold(&st, lambda, r, z).unwrap(),
            deriv_lcfs(&st, lambda, r).unwrap(),
        ] {
            let dq: f64 = d.q.iter().sum();
            let ds: f64 = d.s.iter().sum::<f64>() + d.s_nil.iter().sum::<f64>();
            prop_assert!(dq.abs() < 1e-12, "sum dq = {}", dq);
            prop_assert!(ds.abs() < 1e-12, "sum ds = {}", ds);
        }
    }

    #[test]
    fn threshold_zero_equals_base_everywhere(
        st in fluid_state_strategy(),
        lambda in 0.05_f64..0.99,
        r in 0.5_f64..20.0,
    ) {
        let base = deriv_jiq_random(&st, lambda, r).unwrap();
        let thr = deriv_early_threshold(&st, lambda, r, 0).unwrap();
        prop_assert_eq!(&base.q, &thr.q);
        prop_assert_eq!(&base.s, &thr.s);
        prop_assert_eq!(&base.s_nil, &thr.s_nil);
    }
}

#[test]
fn euler_steps_preserve_tail_monotonicity() {
    // Integrate the SQ(2) family in chunks and check the nonincreasing-tail
    // invariant at every chunk boundary along the trajectory.
    use jiq_core::fluid::deriv_jiq_sqd;

    let mut state = {
        let start = jiq_core::fluid::init_state(48, 48);
        to_tail(&start)
    };
    let settings = IntegrationSettings {
        step: 0.01,
        t_end: 2.0,
        i_max: 48,
        c_max: 48,
        record_every: 1.0,
    };
    for chunk in 0..25 {
        let run = euler_integrate(
            |s: &TailState, o: &mut TailState| {
                let d = deriv_jiq_sqd(s, 0.9, 10.0, 2).unwrap();
                o.q_hat.copy_from_slice(&d.q_hat);
                o.s.copy_from_slice(&d.s);
                o.s_nil.copy_from_slice(&d.s_nil);
            },
            &state,
            &settings,
        )
        .unwrap();
        state = run.state;
        assert!((state.q_hat[0] - 1.0).abs() < 1e-12);
        for w in state.q_hat.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-12,
                "tail not nonincreasing at chunk {chunk}: {} then {}",
                w[0],
                w[1]
            );
        }
        assert!(state.q_hat.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
    }
}
