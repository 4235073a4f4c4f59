use std::f64::consts::PI;

use gridpinn::daesolver::Trajectory;
use gridpinn::machine::{DqCurrents, MachineState};
use gridpinn::metrics::improvement;
use gridpinn::pinn::{
    generate_dataset, init_params, predict_step, wrap_angle, DomainBox, MlpModel, ModelMeta, OutputMode,
};
use gridpinn::{cases, parse_case};
use proptest::prelude::*;

fn sg_star_model(seed: u64, mode: OutputMode) -> MlpModel {
    let c = parse_case(cases::IEEE9).unwrap();
    let k = c.star_machine().unwrap();
    let meta = ModelMeta {
        machine: c.machines[k].params.clone(),
        f_base: 60.0,
        domain: DomainBox::default(),
        train: None,
        seed,
    };
    let mut m = MlpModel::zeros(&[8, 8], mode, meta);
    init_params(&mut m, seed);
    m
}

proptest! {
    #[test]
    fn wrapped_angle_is_in_range_and_equivalent(a in -1e3f64..1e3) {
        let w = wrap_angle(a);
        prop_assert!((-PI..PI).contains(&w));
        prop_assert!((w.sin() - a.sin()).abs() < 1e-9 && (w.cos() - a.cos()).abs() < 1e-9);
    }

    #[test]
    fn zero_step_reproduces_the_state(
        seed in 0u64..1000,
        delta in -10.0f64..10.0,
        w in -0.05f64..0.05,
        e in 0.0f64..2.0,
        id in -1.0f64..1.0,
        iq in -1.0f64..1.0,
        activated in any::<bool>(),
    ) {
        let mode = if activated { OutputMode::Activated } else { OutputMode::Linear };
        let m = sg_star_model(seed, mode);
        let x = MachineState { eq_p: e, ed_p: 1.0 - e / 2.0, delta, domega: w };
        let i = DqCurrents { id, iq };
        let (d, o) = predict_step(&m, 0.0, &x, &i, &DqCurrents { id: iq, iq: id });
        prop_assert_eq!(d, delta);
        prop_assert_eq!(o, w);
    }

    #[test]
    fn improvement_is_bounded_and_zero_on_ties(t in 1e-12f64..1.0, h in 0.0f64..2.0) {
        prop_assert!(improvement(t, h) <= 100.0);
        prop_assert_eq!(improvement(t, t), 0.0);
        prop_assert_eq!(improvement(t, 0.0), 100.0);
        prop_assert_eq!(improvement(0.0, h), 0.0);
    }

    #[test]
    fn trajectory_csv_round_trip_is_bit_exact(vals in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 8)) {
        let s = MachineState { eq_p: vals[0], ed_p: vals[1], delta: vals[2], domega: vals[3] };
        let tr = Trajectory {
            machine_ids: vec!["G1".into()],
            bus_ids: vec![4],
            t: vec![0.0, vals[7]],
            states: vec![vec![s]; 2],
            currents: vec![vec![DqCurrents { id: vals[4], iq: vals[5] }]; 2],
            vm: vec![vec![vals[6]]; 2],
            va: vec![vec![-vals[6]]; 2],
            diagnostics: vec![],
        };
        let back = Trajectory::from_csv(&tr.to_csv()).unwrap();
        prop_assert!(back.same_data(&tr));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn datasets_stay_inside_the_box(seed in any::<u64>()) {
        let c = parse_case(cases::IEEE9).unwrap();
        let p = &c.machines[c.star_machine().unwrap()].params;
        let d = DomainBox::default();
        let ds = generate_dataset(p, 60.0, &d, 16, 16, seed).unwrap();
        prop_assert!(ds.data.iter().all(|s| d.contains(&s.inputs) && s.target.iter().all(|v| v.is_finite())));
        prop_assert!(ds.colloc.iter().all(|c| d.contains(&c.inputs) && c.t >= 0.0 && c.t <= c.inputs.dt));
    }
}
