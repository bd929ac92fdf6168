//! Configuration text survives a parse / print / parse cycle unchanged.

use kinetic_mfg::cli_io::{config_to_text, parse_config};
use proptest::prelude::*;

fn profile() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("m0.x_profile = uniform\n".to_string()),
        (0.0f64..0.99, 0.0f64..1.0).prop_map(|(a, c)| format!(
            "m0.x_profile = cosine\nm0.x_amplitude = {a:?}\nm0.x_center = {c:?}\n"
        )),
        (prop::collection::vec(0.0f64..1.0, 1..4), 0.01f64..0.4).prop_map(|(cs, w)| format!(
            "m0.x_profile = bumps\nm0.x_centers = {}\nm0.x_width = {w:?}\n",
            cs.iter().map(|c| format!("{c:?}")).collect::<Vec<_>>().join(", ")
        )),
    ]
}

fn init() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("free_streaming".to_string()),
        Just("constant".to_string()),
        any::<u64>().prop_map(|s| format!("random:{s}")),
    ]
}

prop_compose! {
    fn config_text()(
        d in 1usize..=2,
        nx in 2usize..40,
        nv in 2usize..40,
        nt in 2usize..40,
        horizon in 0.1f64..5.0,
        v_max in 0.5f64..6.0,
        q in 1.1f64..4.0,
        s_frac in 0.01f64..=1.0,
        r in 1.1f64..4.0,
        c_f in prop::collection::vec(0.0f64..10.0, 1..=1),
        c_g in 0.0f64..10.0,
        c_h in 0.01f64..10.0,
        big_c_h in 0.0f64..3.0,
        prof in profile(),
        sigma in 0.01f64..1.0,
        tau in prop::option::of(1e-4f64..1.0),
        tol_gap in 1e-10f64..1e-2,
        max_iter in 1usize..100_000,
        init in init(),
        t0 in prop::option::of(0.01f64..0.99),
        seed in any::<u64>(),
        record_time in any::<bool>(),
    ) -> String {
        // the terminal exponent may not exceed the running one
        let s = 1.0 + (q - 1.0) * s_frac;
        let tau = tau.map_or("auto".to_string(), |t| format!("{t:?}"));
        let t0 = t0.map_or("auto".to_string(), |t| format!("{:?}", t * horizon));
        format!(
            "run.name = case\nrun.seed = {seed}\ngrid.d = {d}\ngrid.nx = {nx}\ngrid.nv = {nv}\ngrid.nt = {nt}\n\
             grid.horizon = {horizon:?}\ngrid.v_max = {v_max:?}\nmodel.q = {q:?}\nmodel.s = {s:?}\nmodel.r = {r:?}\n\
             model.c_f = {:?}\nmodel.c_g = {c_g:?}\nmodel.c_h = {c_h:?}\nmodel.big_c_h = {big_c_h:?}\n{prof}\
             m0.v_sigma = {sigma:?}\nsolver.tau = {tau}\nsolver.tol_gap = {tol_gap:?}\nsolver.max_iter = {max_iter}\n\
             solver.record_time = {record_time}\nsolver.init = {init}\nprobe.t0 = {t0}\n",
            c_f[0]
        )
    }
}

proptest! {
    #[test]
    fn print_then_parse_is_identity(text in config_text()) {
        let cfg = parse_config(&text).unwrap();
        let printed = config_to_text(&cfg).unwrap();
        let again = parse_config(&printed).unwrap();
        prop_assert_eq!(&cfg, &again);
        prop_assert_eq!(printed, config_to_text(&again).unwrap());
    }
}

#[test]
fn per_cell_coefficients_round_trip() {
    let vals: Vec<String> = (0..16 * 16).map(|i| format!("{:?}", 0.1 + i as f64 / 7.0)).collect();
    let text = format!("model.c_f = {}\n", vals.join(", "));
    let cfg = parse_config(&text).unwrap();
    assert_eq!(parse_config(&config_to_text(&cfg).unwrap()).unwrap(), cfg);
}
