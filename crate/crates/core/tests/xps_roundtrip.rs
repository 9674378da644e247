use proptest::prelude::*;
use resolve_core::synth::{generate_xps, xps_expected_counts, XpsSynthOptions};
use resolve_core::xps::{
    fit_core_level, multilayer_thickness, overlayer_thickness, shirley_background, LayerStack, LineConfig, XpsSpectrum,
};

fn nb_areas(fit: &resolve_core::xps::CoreLevelFit) -> Vec<f64> {
    [5, 4, 2, 0].iter().map(|&s| fit.area(s).unwrap()).collect()
}

fn invert(spectrum: &XpsSpectrum) -> LayerStack {
    let fit = fit_core_level(spectrum, &LineConfig::nb3d()).unwrap();
    multilayer_thickness(&nb_areas(&fit), None, &LayerStack::niobium_oxides([0.0; 3])).unwrap()
}

#[test]
fn noiseless_nb3d_areas() {
    let stack = LayerStack::niobium_oxides([2.5, 1.0, 1.0]);
    let line = LineConfig::nb3d();
    let (e, counts, comps) = xps_expected_counts(&stack, &line, 1e5, &XpsSynthOptions::default()).unwrap();
    let spectrum = XpsSpectrum::new(e, counts, "Nb3d").unwrap();
    let fit = fit_core_level(&spectrum, &line).unwrap();
    for st in &fit.states {
        let truth: f64 = comps
            .iter()
            .filter(|c| c.oxidation_state == st.oxidation_state)
            .map(|c| c.amplitude)
            .sum();
        let rel = (st.area - truth).abs() / truth;
        assert!(
            rel < 5e-3,
            "state {}: {} vs {truth} ({rel:e})",
            st.oxidation_state,
            st.area
        );
    }
    let solved = invert(&spectrum);
    for (got, want) in solved.layers.iter().zip([2.5, 1.0, 1.0]) {
        assert!((got.thickness - want).abs() < 0.02, "{} {}", got.name, got.thickness);
    }
}

#[test]
fn injected_shirley_step_recovered() {
    let stack = LayerStack::niobium_oxides([2.5, 1.0, 1.0]);
    let line = LineConfig::nb3d();
    let opts = XpsSynthOptions::default();
    let (e, counts, comps) = xps_expected_counts(&stack, &line, 1e5, &opts).unwrap();
    let signal: Vec<f64> = e
        .iter()
        .map(|&x| resolve_core::xps::evaluate_components(&comps, x))
        .collect();
    let injected: Vec<f64> = counts.iter().zip(&signal).map(|(c, s)| c - s).collect();
    let spectrum = XpsSpectrum::new(e, counts, "Nb3d").unwrap();
    let bg = shirley_background(&spectrum, spectrum.full_window()).unwrap();
    let worst = bg
        .values
        .iter()
        .zip(&injected)
        .map(|(b, i)| ((b - i) / i).abs())
        .fold(0.0, f64::max);
    assert!(worst < 5e-3, "{worst}");
}

#[test]
fn poisson_snr_300_inversion() {
    let stack = LayerStack::niobium_oxides([2.5, 1.0, 1.0]);
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let spectrum = generate_xps(&stack, &LineConfig::nb3d(), 9e4, seed).unwrap();
        let solved = invert(&spectrum);
        for (got, want) in solved.layers.iter().zip([2.5, 1.0, 1.0]) {
            worst = worst.max((got.thickness - want).abs());
        }
    }
    eprintln!("worst thickness error {worst}");
    assert!(worst < 0.02, "{worst}");
}

#[test]
fn total_area_matches_data() {
    let stack = LayerStack::niobium_oxides([2.0, 0.8, 0.6]);
    let spectrum = generate_xps(&stack, &LineConfig::nb3d(), 9e4, 4).unwrap();
    let fit = fit_core_level(&spectrum, &LineConfig::nb3d()).unwrap();
    assert!(((fit.model_area - fit.data_area) / fit.data_area).abs() < 0.02);
}

#[test]
fn oxide_to_metal_ratio_at_high_counts() {
    // single 4.5 nm Nb2O5 layer: oxide/metal = e^{4.5/1.7} - 1
    let mut stack = LayerStack::niobium_oxides([4.5, 0.0, 0.0]);
    stack.layers.truncate(1);
    let want = (4.5f64 / 1.7).exp() - 1.0;
    for seed in 0..5 {
        let spectrum = generate_xps(&stack, &LineConfig::nb3d(), 1e5, 100 + seed).unwrap();
        let fit = fit_core_level(&spectrum, &LineConfig::nb3d()).unwrap();
        let oxide: f64 = fit
            .states
            .iter()
            .filter(|s| s.oxidation_state != 0)
            .map(|s| s.area)
            .sum();
        let ratio = oxide / fit.area(0).unwrap();
        assert!(((ratio - want) / want).abs() < 0.02, "{ratio} vs {want}");
        let d = overlayer_thickness(oxide, fit.area(0).unwrap(), 1.0, 1.7).unwrap();
        assert!((d - 4.5).abs() < 0.05);
    }
}

#[test]
fn missing_si4_component_is_consistent_with_zero() {
    let line = LineConfig::si2p();
    let stack = LayerStack {
        layers: vec![resolve_core::xps::Layer {
            name: "SiOx".to_string(),
            thickness: 1.0,
            eal: 2.84,
            relative_density: 1.0,
            sensitivity_ratio: 1.0,
            oxidation_state: Some(3),
            thickness_sigma: None,
        }],
        substrate: resolve_core::xps::Substrate {
            name: "Si".to_string(),
            eal: 2.84,
        },
    };
    for seed in 0..5 {
        let spectrum = generate_xps(&stack, &line, 9e4, seed).unwrap();
        let fit = fit_core_level(&spectrum, &line).unwrap();
        let si4 = fit.states.iter().find(|s| s.oxidation_state == 4).unwrap();
        assert!(si4.area < 3.0 * si4.area_sigma, "{} ± {}", si4.area, si4.area_sigma);
        let si3 = fit.area(3).unwrap();
        assert!(si3 > fit.area(2).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn multilayer_forward_inverse(
        d in proptest::array::uniform3(0.0f64..4.0),
        eal in proptest::array::uniform3(0.8f64..3.0),
        density in proptest::array::uniform3(0.5f64..2.0),
    ) {
        let mut stack = LayerStack::niobium_oxides(d);
        for (k, l) in stack.layers.iter_mut().enumerate() {
            l.eal = eal[k];
            l.relative_density = density[k];
        }
        let areas = stack.forward_intensities();
        let mut template = stack.clone();
        for l in &mut template.layers {
            l.thickness = 0.0;
        }
        let solved = multilayer_thickness(&areas, None, &template).unwrap();
        for (got, want) in solved.layers.iter().zip(&d) {
            prop_assert!((got.thickness - want).abs() < 1e-6);
        }
    }

    #[test]
    fn overlayer_monotone_and_linear_in_eal(r1 in 0.0f64..50.0, dr in 1e-6f64..10.0, eal in 0.1f64..5.0) {
        let a = overlayer_thickness(r1, 1.0, 1.0, eal).unwrap();
        let b = overlayer_thickness(r1 + dr, 1.0, 1.0, eal).unwrap();
        prop_assert!(b > a);
        let c = overlayer_thickness(r1, 1.0, 1.0, 2.0 * eal).unwrap();
        prop_assert!((c - 2.0 * a).abs() <= 1e-12 * c.abs().max(1e-300));
    }
}
