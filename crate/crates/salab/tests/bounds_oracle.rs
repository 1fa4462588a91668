//! Bound curves against an independent 50-digit re-evaluation
//! (`tests/oracles/bounds_oracle.py`; regenerate the tables by running it).

use salab::bounds::{build_add_ledger, build_mult_ledger, AddInputs, BoundVariant, MultInputs};
use salab::core::NormSpec;
use salab::moreau::MoreauConfig;

const MULT: &[(&str, f64)] = &[
    ("h", 289.92079207920792079),
    ("c1", 4366520029.1891600829),
    ("c5", 218264384619621.92495),
    ("c1pp", 9.6629039914126418678e+27),
    ("dpos_0", 9.5308665596255072013e+23),
    ("prime_0", 1.0866051047465082705e+33),
    ("fixed_0", 9.5308665596255072013e+23),
    ("dpos_1", 9.4981083813370561328e+23),
    ("prime_1", 1.0828701585370001521e+33),
    ("fixed_1", 9.4981083813370561328e+23),
    ("dpos_10", 9.2131144038481905814e+23),
    ("prime_10", 1.0503764064002271167e+33),
    ("fixed_10", 9.2131144038481905814e+23),
    ("dpos_100", 7.0867416067292553469e+23),
    ("prime_100", 8.079387838086057407e+32),
    ("fixed_100", 7.0867416067292553469e+23),
    ("dpos_1000", 2.142423193373068666e+23),
    ("prime_1000", 2.4423444369242051745e+32),
    ("fixed_1000", 2.142423193373068666e+23),
    ("dpos_10000", 2.686178234432500239e+22),
    ("prime_10000", 3.0618513832767202823e+31),
    ("fixed_10000", 2.686178234432500239e+22),
];
const ADD_Z1: &[(&str, f64)] = &[
    ("h", 281.6),
    ("markov_0", 12.464899507793494693),
    ("fixed_0", 13.464899507793494693),
    ("ville_0", 12.464899507793494693),
    ("markov_1", 13.107256253540724562),
    ("fixed_1", 13.413023252671366462),
    ("ville_1", 12.424684010596773197),
    ("markov_10", 14.313493288760163245),
    ("fixed_10", 12.963536811325248481),
    ("ville_10", 12.074567134485019652),
    ("markov_100", 12.378630574418424985),
    ("fixed_100", 9.7108686835837848873),
    ("ville_100", 9.4454703744542811565),
    ("markov_1000", 4.0728138011134129193),
    ("fixed_1000", 2.7745106286296690704),
    ("ville_1000", 3.1054528143892231939),
    ("markov_10000", 0.56663667636162389099),
    ("fixed_10000", 0.34176311511234489568),
    ("ville_10000", 0.44983765484501865889),
];
const ADD_Z06: &[(&str, f64)] = &[
    ("h", 1024.0),
    ("markov_0", 5.2161479652360407321),
    ("fixed_0", 6.2161479652360407321),
    ("ville_0", 3.4978661367769954967),
    ("markov_1", 5.8986410591555371843),
    ("fixed_1", 6.2053142223689949176),
    ("ville_1", 3.4997221686478031827),
    ("markov_10", 7.5006487278806757575),
    ("fixed_10", 6.1108807939982327015),
    ("ville_10", 3.5162631005391768722),
    ("markov_100", 8.8190003225051666631),
    ("fixed_100", 5.4004422083218757505),
    ("ville_100", 3.6668737435031544966),
    ("markov_1000", 7.3936944098035611921),
    ("fixed_1000", 3.4677003724514740402),
    ("ville_1000", 4.4062324935969815182),
    ("markov_10000", 3.2265776754854135859),
    ("fixed_10000", 1.253505816982619588),
    ("ville_10000", 4.6549737659402323298),
];

const KS: [usize; 6] = [0, 1, 10, 100, 1000, 10000];
const REL_TOL: f64 = 1e-11;

fn get(table: &[(&str, f64)], key: &str) -> f64 {
    table.iter().find(|(k, _)| *k == key).unwrap_or_else(|| panic!("missing {key}")).1
}

fn close(got: f64, want: f64, what: &str) {
    let rel = (got - want).abs() / want.abs();
    assert!(rel <= REL_TOL, "{what}: got {got:e}, oracle {want:e}, rel {rel:e}");
}

fn euclid() -> MoreauConfig {
    MoreauConfig::new(NormSpec::euclidean(1), NormSpec::euclidean(1), 1.0).unwrap()
}

#[test]
fn multiplicative_curves_match_oracle() {
    let l = build_mult_ledger(&MultInputs {
        gamma_c: 0.5,
        sigma: 0.75,
        x0_err: 1.0,
        xstar_norm: 1.0,
        moreau: euclid(),
        alpha: 2.02,
        h: None,
    })
    .unwrap();
    assert!(l.conditions.passed(), "{}", l.conditions.summary());
    close(l.h(), get(MULT, "h"), "h");
    close(l.c1.unwrap(), get(MULT, "c1"), "c1");
    close(l.c5.unwrap(), get(MULT, "c5"), "c5");
    close(l.c1_double_prime.unwrap(), get(MULT, "c1pp"), "c1''");
    for (variant, tag) in [
        (BoundVariant::MultDpos, "dpos"),
        (BoundVariant::MultPrime, "prime"),
        (BoundVariant::FixedTimeMult, "fixed"),
    ] {
        let c = l.bound_curve(variant, 0.1, 0, &KS).unwrap();
        for (k, v) in KS.iter().zip(&c.values) {
            close(*v, get(MULT, &format!("{tag}_{k}")), &format!("{tag} k={k}"));
        }
    }
}

#[test]
fn additive_curves_match_oracle() {
    for (z, alpha, table) in [(1.0, 4.4, ADD_Z1), (0.6, 1.0, ADD_Z06)] {
        let l = build_add_ledger(&AddInputs {
            gamma_c: 0.5,
            sigma_bar: 1.0,
            c_d: 1.0,
            x0_err: 1.0,
            moreau: euclid(),
            alpha,
            h: None,
            z,
        })
        .unwrap();
        assert!(l.conditions.passed(), "{}", l.conditions.summary());
        close(l.h(), get(table, "h"), "h");
        for (variant, tag) in [
            (l.primary_variant(), "markov"),
            (BoundVariant::AddVille, "ville"),
            (BoundVariant::FixedTimeAdd, "fixed"),
        ] {
            let c = l.bound_curve(variant, 0.05, 0, &KS).unwrap();
            for (k, v) in KS.iter().zip(&c.values) {
                close(*v, get(table, &format!("{tag}_{k}")), &format!("z={z} {tag} k={k}"));
            }
        }
    }
}
