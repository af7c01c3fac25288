use cryptoload::converter::{Converter, ConverterParams};
use cryptoload::engine::{run_single, SimConfig};
use cryptoload::signals::{LineSource, SagSpec, SineSpec};
use proptest::prelude::*;

fn nominal() -> SineSpec {
    SineSpec::new(240.0, 60.0, 0.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn inductor_current_never_negative(r in 0.0f64..1.0, pow in 0.0f64..360.0, dur in 0.005f64..0.08) {
        let p = ConverterParams::default();
        let dt = 1e-6;
        let source = LineSource::with_sag(nominal(), SagSpec::new(r, pow, dur).unwrap(), 0.12);
        let mut conv = Converter::new(p, dt).unwrap();
        let steps = ((source.sag.unwrap().end_s() + 0.05) / dt) as usize;
        for n in 0..steps {
            let (a, b) = (n as f64 * dt, (n + 1) as f64 * dt);
            conv.step(source.sample(a), source.sample(b), dt, true).unwrap();
            prop_assert!(conv.state().i_l >= 0.0, "i_l = {} at step {}", conv.state().i_l, n);
        }
    }

    #[test]
    fn trip_latch_is_absorbing(trip_a in 3.0f64..10.0) {
        let mut p = ConverterParams::default();
        p.protection.i_trip_rms = trip_a;
        let sim = SimConfig { t_end: 0.15, record_stride: 1, ..SimConfig::default() };
        let run = run_single(LineSource::ideal(nominal()), p, &sim).unwrap();
        let trip = run.converters[0].trip;
        prop_assert!(trip.is_tripped());
        let t_off = trip.trip_time.unwrap() + 1.0 / p.f_switch;
        let i = run.trace.channel("i_in").unwrap();
        let from = run.trace.index_at(t_off);
        prop_assert!(from < i.len());
        prop_assert!(i[from..].iter().all(|&x| x == 0.0));
    }
}

#[test]
fn startup_inrush_exceeds_steady_peak() {
    let run = run_single(
        LineSource::ideal(nominal()),
        ConverterParams::default(),
        &SimConfig::default(),
    )
    .unwrap();
    let i = run.trace.channel("i_in").unwrap();
    let per = (run.trace.sample_rate() / 60.0).round() as usize;
    let startup = i[..2 * per].iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let steady = i[i.len() - 2 * per..].iter().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(startup > steady, "startup {startup} vs steady {steady}");
}

#[test]
fn identical_inputs_give_identical_traces() {
    let source = LineSource::with_sag(nominal(), SagSpec::new(0.3, 90.0, 0.02).unwrap(), 0.4);
    let sim = SimConfig {
        t_end: 0.55,
        ..SimConfig::default()
    };
    let a = run_single(source.clone(), ConverterParams::default(), &sim).unwrap();
    let b = run_single(source, ConverterParams::default(), &sim).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.converters, b.converters);
}
