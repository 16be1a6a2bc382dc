use std::f64::consts::TAU;

use homwb::interference::{
    coincidence_curve, drift_average_quadrature, gate_window, joint_density, joint_density_full,
    noninterfering_curve, GateWindow,
};
use homwb::wavepacket::{
    barium_sigma_transitions, branching_mixture, exponential_envelope, solve_bloch, zeeman_lines, BlochParams,
    EmissionMixture, SpectralModel, TemporalEnvelope, BOHR_MHZ_PER_GAUSS, G_D32, G_S12,
};
use proptest::prelude::*;

fn exp_intensity(t: f64, tau: f64, span: f64) -> f64 {
    if t < 0.0 || t >= span {
        return 0.0;
    }
    (-t / tau).exp() / (tau * (1.0 - (-span / tau).exp()))
}

fn oracle_density(t0: f64, tau: f64, (ta, sa): (f64, f64), (ti, si): (f64, f64)) -> f64 {
    let (a0, a1) = (exp_intensity(t0, ta, sa), exp_intensity(t0 + tau, ta, sa));
    let (i0, i1) = (exp_intensity(t0, ti, si), exp_intensity(t0 + tau, ti, si));
    0.25 * (a0 * i1 + a1 * i0 - 2.0 * (a0 * a1 * i0 * i1).sqrt())
}

#[test]
fn point_density_matches_fine_grid_oracle() {
    let dt = 0.1;
    let atom = exponential_envelope(120.0, 0.0, 1200.0, dt).unwrap();
    let ion = exponential_envelope(50.0, 0.0, 500.0, dt).unwrap();
    let d = joint_density(&atom, &ion, 0.0).unwrap();
    let lib = d.value(0.0, 10.0);
    let fine = dt / 10.0;
    let oracle = (0..10)
        .map(|k| oracle_density(fine * (k as f64 + 0.5), 10.0, (120.0, 1200.0), (50.0, 500.0)))
        .sum::<f64>()
        / 10.0;
    assert!(((lib - oracle) / oracle).abs() < 1e-6, "{lib} vs {oracle}");
}

#[test]
fn exponential_opposite_port_probability() {
    let atom = exponential_envelope(120.0, 0.0, 2400.0, 0.5).unwrap();
    let ion = exponential_envelope(50.0, 0.0, 1000.0, 0.5).unwrap();
    let d = joint_density(&atom, &ion, 0.0).unwrap();
    let overlap = 2.0 * (120.0f64 * 50.0).sqrt() / 170.0;
    let expected = 0.5 * (1.0 - overlap * overlap);
    assert!((expected - 0.0848).abs() < 1e-4);
    assert!((d.opposite_port_probability() - expected).abs() < 1e-4);
}

#[test]
fn ion_gate_window() {
    let ion = exponential_envelope(50.0, 0.0, 500.0, 0.25).unwrap();
    let g = gate_window(&ion, 0.8).unwrap();
    assert!(g.start.abs() < 0.125, "{g:?}");
    assert!((g.end - 80.47).abs() < 0.125, "{g:?}");
}

#[test]
fn gated_reference_is_asymmetric() {
    let atom = exponential_envelope(120.0, 0.0, 1200.0, 0.5).unwrap();
    let ion = exponential_envelope(50.0, 0.0, 500.0, 0.5).unwrap();
    let gate = gate_window(&ion, 0.8).unwrap();
    let grid = [-60.0, 60.0];
    let c = noninterfering_curve(&atom, &EmissionMixture::pure(ion), &gate, &grid).unwrap();
    let asym = (c.value[0] - c.value[1]).abs() / c.value[0].max(c.value[1]);
    assert!(asym > 0.05, "{:?}", c.value);
}

#[test]
fn mixture_mean_by_quadrature() {
    let direct = exponential_envelope(50.0, 0.0, 800.0, 0.5).unwrap();
    let mix = branching_mixture(direct.clone(), 0.25).unwrap();
    let delay_mean: f64 = mix.delay().weights().iter().enumerate().map(|(k, w)| 0.5 * k as f64 * w).sum();
    let expected = direct.mean_time() + 0.25 * delay_mean;
    assert!((mix.intensity_envelope().mean_time() - expected).abs() < 1e-9);
    assert!((mix.mean_time() - expected).abs() < 1e-9);
}

#[test]
fn zeeman_lines_at_five_gauss() {
    let model = zeeman_lines(5.0, G_D32, G_S12, &barium_sigma_transitions()).unwrap();
    let larmor = TAU * 1.3996e-3 * 5.0;
    let expected = [
        (-2.2, 1.0 / 6.0),
        (-1.4, 1.0 / 12.0),
        (-0.6, 1.0 / 6.0),
        (-0.2, 1.0 / 12.0),
        (0.2, 1.0 / 12.0),
        (0.6, 1.0 / 6.0),
        (1.4, 1.0 / 12.0),
        (2.2, 1.0 / 6.0),
    ];
    assert_eq!(model.lines().len(), expected.len());
    for (line, (x, w)) in model.lines().iter().zip(expected) {
        assert!((line.detuning - x * larmor).abs() < 1e-12, "{line:?}");
        assert!((line.weight - w).abs() < 1e-12, "{line:?}");
    }
    assert_eq!(BOHR_MHZ_PER_GAUSS, 1.3996);
}

#[test]
fn full_gate_equals_ungated() {
    let atom = exponential_envelope(40.0, 0.0, 400.0, 1.0).unwrap();
    let ion = exponential_envelope(15.0, 0.0, 150.0, 1.0).unwrap().shifted(7.0);
    let d = joint_density(&atom, &ion, 0.1).unwrap();
    let grid: Vec<f64> = (-30..=30).map(|m| 3.0 * m as f64).collect();
    let a = coincidence_curve(&d, &d.support(), &grid).unwrap();
    let b = coincidence_curve(&d, &GateWindow::new(-1e4, 1e4).unwrap(), &grid).unwrap();
    assert_eq!(a.value, b.value);
}

#[test]
fn quadrature_converges() {
    let (offset, sigma, tau) = (TAU * 0.02, TAU * 0.01, 16.0);
    let exact = (offset * tau).cos() * (-0.5 * sigma * sigma * tau * tau).exp();
    let coarse = (drift_average_quadrature(offset, sigma, tau, 11) - exact).abs();
    let fine = (drift_average_quadrature(offset, sigma, tau, 4001) - exact).abs();
    assert!(fine < 1e-12 && fine <= coarse, "{coarse} {fine}");
}

fn envelope_strategy() -> impl Strategy<Value = TemporalEnvelope> {
    (prop::collection::vec(0.0f64..1.0, 8..40), -20.0f64..20.0).prop_filter_map("zero energy", |(s, t0)| {
        TemporalEnvelope::new(t0, 1.0, s).ok()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn envelopes_are_normalized(env in envelope_strategy()) {
        prop_assert!((env.norm() - 1.0).abs() < 1e-12);
        prop_assert!((env.cdf(env.t_end()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn density_is_nonnegative(a in envelope_strategy(), b in envelope_strategy(),
                              det in -1.0f64..1.0, drift in 0.0f64..0.2, c in 0.0f64..=1.0) {
        let spec = SpectralModel::single(det).with_drift(drift).unwrap();
        let d = joint_density_full(&a, &EmissionMixture::pure(b), &spec).unwrap().with_overlap(c).unwrap();
        let max = d.len() as i64;
        for m in -max..max {
            prop_assert!(d.row(m).iter().all(|v| *v >= -1e-12));
        }
    }

    #[test]
    fn zero_delay_vanishes_for_full_overlap(a in envelope_strategy(), b in envelope_strategy(), det in -1.0f64..1.0) {
        let d = joint_density(&a, &b, det).unwrap();
        let c = coincidence_curve(&d, &d.support(), &[0.0]).unwrap();
        prop_assert!(c.value[0].abs() < 1e-12);
    }

    #[test]
    fn ungated_curve_is_symmetric(a in envelope_strategy(), b in envelope_strategy(), det in -1.0f64..1.0) {
        let d = joint_density(&a, &b, det).unwrap();
        let grid: Vec<f64> = (-40..=40).map(|m| m as f64).collect();
        let c = coincidence_curve(&d, &d.support(), &grid).unwrap();
        let n = grid.len();
        for i in 0..n {
            prop_assert!((c.value[i] - c.value[n - 1 - i]).abs() < 1e-12);
        }
    }

    #[test]
    fn suppression_is_monotone_in_overlap(a in envelope_strategy(), b in envelope_strategy(),
                                          c1 in 0.0f64..=1.0, c2 in 0.0f64..=1.0) {
        let (lo, hi) = if c1 < c2 { (c1, c2) } else { (c2, c1) };
        let d = joint_density(&a, &b, 0.0).unwrap();
        let support = d.support();
        let grid: Vec<f64> = (-30..=30).map(|m| m as f64).collect();
        let weak = coincidence_curve(&d.clone().with_overlap(lo).unwrap(), &support, &grid).unwrap();
        let strong = coincidence_curve(&d.with_overlap(hi).unwrap(), &support, &grid).unwrap();
        for (w, s) in weak.value.iter().zip(&strong.value) {
            prop_assert!(*s <= *w + 1e-12);
        }
    }

    #[test]
    fn drift_weakens_suppression(a in envelope_strategy(), b in envelope_strategy(), s1 in 0.0f64..0.3, s2 in 0.0f64..0.3) {
        let (lo, hi) = if s1 < s2 { (s1, s2) } else { (s2, s1) };
        let gate = GateWindow::new(-1e3, 1e3).unwrap();
        let grid: Vec<f64> = (-30..=30).map(|m| m as f64).collect();
        let curve = |s: f64| {
            let spec = SpectralModel::ideal().with_drift(s).unwrap();
            let d = joint_density_full(&a, &EmissionMixture::pure(b.clone()), &spec).unwrap();
            coincidence_curve(&d, &gate, &grid).unwrap()
        };
        let (narrow, wide) = (curve(lo), curve(hi));
        for (n, w) in narrow.value.iter().zip(&wide.value) {
            prop_assert!(*w >= *n - 1e-12);
        }
    }

    #[test]
    fn grid_refinement_converges(ta in 20.0f64..150.0, ti in 20.0f64..80.0) {
        let curve = |dt: f64| {
            let atom = exponential_envelope(ta, 0.0, 8.0 * ta, dt).unwrap();
            let ion = exponential_envelope(ti, 0.0, 8.0 * ti, dt).unwrap();
            let d = joint_density(&atom, &ion, 0.0).unwrap();
            let grid: Vec<f64> = (-20..=20).map(|m| 5.0 * m as f64).collect();
            let gate = GateWindow::new(0.0, 2.0 * ti).unwrap();
            let reference = coincidence_curve(&d.without_interference(), &gate, &grid).unwrap();
            (coincidence_curve(&d, &gate, &grid).unwrap(), reference.peak())
        };
        let ((coarse, _), (fine, peak)) = (curve(0.5), curve(0.25));
        for (c, f) in coarse.value.iter().zip(&fine.value) {
            prop_assert!((c - f).abs() / peak < 1e-4, "{} vs {}", c, f);
        }
    }

    #[test]
    fn zeeman_field_reversal_mirrors_lines(b in 0.1f64..20.0) {
        let t = barium_sigma_transitions();
        let up = zeeman_lines(b, G_D32, G_S12, &t).unwrap();
        let down = zeeman_lines(-b, G_D32, G_S12, &t).unwrap();
        let n = up.lines().len();
        prop_assert_eq!(n, down.lines().len());
        for i in 0..n {
            let (u, d) = (up.lines()[i], down.lines()[n - 1 - i]);
            prop_assert!((u.detuning + d.detuning).abs() < 1e-12);
            prop_assert!((u.weight - d.weight).abs() < 1e-12);
        }
    }

    #[test]
    fn bloch_preserves_trace(rabi in 0.05f64..0.5, det in -0.3f64..0.3, br in 0.0f64..=1.0) {
        let p = BlochParams { tail: Some(50.0), ..BlochParams::new(rabi, det, 100.0, br, 0.05) };
        let traj = solve_bloch(&p).unwrap();
        for i in 0..traj.ground.len() {
            let total = traj.ground[i] + traj.excited[i] + traj.metastable[i];
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(traj.excited[i] >= -1e-12);
        }
    }
}
