// Scratch probe for picking check discretizations; deleted before release.
use exitflow::data::{DataRole, ScalarData};
use exitflow::functionals::{functional_grid, FunctionalConfig, FunctionalKind};
use exitflow::grid::{domain_mask, inner_product, GridFunction, GridSpec};
use exitflow::pde::{value_from_source, Direction, EvolutionOperator, SchemeConfig};
use exitflow::scenario::by_name;
use std::f64::consts::PI;

fn fit_order(hs: &[f64], errs: &[f64]) -> f64 {
    // least squares slope of log err vs log h
    let n = hs.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (h, e) in hs.iter().zip(errs) {
        let (x, y) = (h.ln(), e.ln());
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

#[test]
#[ignore]
fn probe_equivalence_orders() {
    for (scn_name, horizon) in [("paper-cos", PI), ("const-drift", 1.0)] {
        let scn = by_name::<f64>(scn_name).unwrap();
        let cases: [(&str, SchemeConfig<f64>, Vec<f64>); 2] = [
            ("remap T/128", SchemeConfig::default(), vec![horizon / 128.0; 3]),
            (
                "upwind 0.9h",
                SchemeConfig::upwind(),
                vec![0.9 / 64.0, 0.9 / 128.0, 0.9 / 256.0],
            ),
        ];
        for (label, scheme, dts) in cases {
            let mut errs = vec![];
            let hs = [2.0 / 64.0, 2.0 / 128.0, 2.0 / 256.0];
            for (i, cells) in [64usize, 128, 256].iter().enumerate() {
                let spec = GridSpec::from_domain(&scn.domain, *cells);
                let mask = domain_mask(&spec, &scn.domain);
                let ucfg = FunctionalConfig::default();
                let ugrid = functional_grid(
                    &scn.field,
                    &scn.domain,
                    &scn.terminal,
                    FunctionalKind::Terminal,
                    0.0,
                    horizon,
                    &spec,
                    &mask,
                    &ucfg,
                )
                .unwrap();
                let zeta = GridFunction::sample(spec.clone(), mask.clone(), |x| {
                    scn.terminal.eval(x, horizon).unwrap()
                });
                let op = EvolutionOperator::new(
                    Direction::Backward,
                    scn.field.clone(),
                    spec.clone(),
                    mask.clone(),
                    0.0,
                    0.0,
                    horizon,
                    dts[i],
                    scheme.clone(),
                )
                .unwrap();
                let u = op.solve_backward(&zeta).unwrap();
                let d = u.first().distance_l2(&ugrid).unwrap();
                errs.push(d);
            }
            println!(
                "{scn_name} U {label}: errs {errs:?} order {:.3}",
                fit_order(&hs, &errs)
            );
        }
    }
}

#[test]
#[ignore]
fn probe_duality_order() {
    let scn = by_name::<f64>("const-drift").unwrap();
    for (label, scheme) in [
        ("remap", SchemeConfig::<f64>::default()),
        ("upwind", SchemeConfig::upwind()),
    ] {
        let mut lhs_errs = vec![];
        let hs = [2.0 / 64.0, 2.0 / 128.0, 2.0 / 256.0];
        for cells in [64usize, 128, 256] {
            let spec = GridSpec::from_domain(&scn.domain, cells);
            let mask = domain_mask(&spec, &scn.domain);
            let dt = 0.9 * (2.0 / cells as f64);
            let vfam = value_from_source(
                &scn.field,
                &scn.running,
                &spec,
                &mask,
                0.0,
                1.0,
                0.0,
                dt,
                &scheme,
            )
            .unwrap();
            let rho = GridFunction::sample(spec.clone(), mask.clone(), |_| 0.5);
            let lhs = inner_product(vfam.first(), &rho).unwrap();
            lhs_errs.push((lhs - 0.75).abs() / 0.75);
        }
        println!(
            "duality {label}: rel errs {lhs_errs:?} order {:.3}",
            fit_order(&hs, &lhs_errs)
        );
    }
}

#[test]
#[ignore]
fn probe_const_drift_v_distance() {
    let scn = by_name::<f64>("const-drift").unwrap();
    for nt in [64usize, 128, 256] {
        let spec = GridSpec::from_domain(&scn.domain, 256);
        let mask = domain_mask(&spec, &scn.domain);
        let cfg = FunctionalConfig::default();
        let vgrid = functional_grid(
            &scn.field,
            &scn.domain,
            &scn.running,
            FunctionalKind::Integral,
            0.0,
            1.0,
            &spec,
            &mask,
            &cfg,
        )
        .unwrap();
        let phi = ScalarData::<f64>::one(DataRole::Running);
        let vfam = value_from_source(
            &scn.field,
            &phi,
            &spec,
            &mask,
            0.0,
            1.0,
            0.0,
            1.0 / nt as f64,
            &SchemeConfig::default(),
        )
        .unwrap();
        let d = vfam.first().distance_l2(&vgrid).unwrap();
        let rel = d / vgrid.norm_l2();
        println!("const-drift V remap nt={nt}: rel distance {rel:.5}");
    }
}
