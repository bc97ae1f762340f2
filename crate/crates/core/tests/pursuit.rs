use std::f64::consts::FRAC_PI_4;

use proptest::prelude::*;
use swarmscale::attrition::RngStream;
use swarmscale::dynamics::{AgentState, Side};
use swarmscale::pursuit::{auction_assign, intercept_point, run_pursuit, scatter_attackers, Pursuit, PursuitParams};
use swarmscale::Vec2;

#[test]
fn scatter_speeds_average_half_the_top_speed() {
    let p = PursuitParams { n_attackers: 100_000, ..PursuitParams::default() };
    let v = scatter_attackers(&p, &mut RngStream::new(5));
    let mean = v.iter().map(|x| x.norm()).sum::<f64>() / v.len() as f64;
    assert!((mean / (p.attacker_speed / 2.0) - 1.0).abs() < 0.01, "{mean}");
    for x in &v {
        assert!(x.norm() > 0.0 && x.norm() < p.attacker_speed);
        assert!(x.y.atan2(x.x).abs() < FRAC_PI_4);
    }
}

#[test]
fn farthest_attacker_picks_first() {
    let att = [
        AgentState::new(0, Side::Attacker, Vec2::new(5.0, 0.0)),
        AgentState::new(1, Side::Attacker, Vec2::new(10.0, 0.0)),
    ];
    let def = [
        AgentState::new(10, Side::Defender, Vec2::new(9.0, 0.0)),
        AgentState::new(11, Side::Defender, Vec2::new(20.0, 0.0)),
    ];
    let a = auction_assign(&att, &def, Vec2::ZERO);
    assert_eq!(a.targets[&10], 1);
    assert_eq!(a.targets[&11], 0);
}

#[test]
fn intercept_reference_cases() {
    let i = intercept_point(Vec2::new(1.0, 0.0), Vec2::ZERO, Vec2::ZERO, 1.0);
    assert_eq!(i.point, Vec2::new(1.0, 0.0));
    let i = intercept_point(Vec2::new(1.0, 0.0), Vec2::new(1.0, 0.0), Vec2::ZERO, 2.0);
    assert!((i.time.unwrap() - 1.0).abs() < 1e-12);
    assert!(i.point.distance(Vec2::new(2.0, 0.0)) < 1e-12);
}

#[test]
fn injected_velocities_make_the_run_deterministic() {
    let p = PursuitParams { n_attackers: 4, n_defenders: 3, ..PursuitParams::default() };
    let vels = vec![Vec2::new(0.2, 0.05), Vec2::new(0.3, -0.1), Vec2::new(0.1, 0.0), Vec2::new(0.25, 0.1)];
    let a = Pursuit::with_attackers(p.clone(), vels.clone(), 8).unwrap().run().unwrap();
    let b = Pursuit::with_attackers(p, vels, 8).unwrap().run().unwrap();
    assert_eq!(a.t_k.to_bits(), b.t_k.to_bits());
}

proptest! {
    #[test]
    fn intercept_arrivals_coincide(tx in -100.0..100.0f64, ty in -100.0..100.0f64, speed in 0.0..0.95f64, heading in -3.2..3.2f64,
                                   px in -100.0..100.0f64, py in -100.0..100.0f64, vd in 1.0..3.0f64) {
        let target = Vec2::new(tx, ty);
        let vel = Vec2::from_polar(speed * vd, heading);
        let pursuer = Vec2::new(px, py);
        let i = intercept_point(target, vel, pursuer, vd);
        let t = i.time.expect("a faster pursuer always has an intercept");
        prop_assert!(!i.fallback);
        let scale = 1.0 + target.distance(pursuer);
        prop_assert!((i.point.distance(pursuer) - vd * t).abs() < 1e-9 * scale);
        prop_assert!((target + vel * t).distance(i.point) < 1e-9 * scale);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn attackers_never_win(na in 1usize..10, nd in 1usize..6, seed in any::<u64>()) {
        let p = PursuitParams { n_attackers: na, n_defenders: nd, ..PursuitParams::default() };
        let o = run_pursuit(&p, seed).unwrap();
        prop_assert!(!o.timed_out);
        prop_assert_eq!(o.p_a, 0.0);
        prop_assert_eq!(o.kills, na);
    }
}
