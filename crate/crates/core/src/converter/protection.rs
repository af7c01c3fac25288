use super::{ConverterParams, ConverterState, TripCause, TripStatus};

/// Evaluates the protection functions against the state at `state.t`.
///
/// Overcurrent fires on the trailing one-cycle RMS of the inductor current
/// and only once that window is full. DC-bus over/undervoltage, when
/// enabled, fires after the bus has been out of band continuously for
/// `uv_ov_delay_s`. A latched trip is returned unchanged.
pub fn check_protection(state: &mut ConverterState, params: &ConverterParams) -> TripStatus {
    let prot = &params.protection;
    if state.trip.is_tripped() && prot.latching {
        return state.trip;
    }
    if state.rms_buffer.is_full() && state.rms_buffer.rms() > prot.i_trip_rms {
        return TripStatus::tripped(TripCause::Overcurrent, state.t);
    }
    if prot.dc_voltage_enabled {
        let cause = if state.v_dc > prot.v_dc_over {
            Some(TripCause::DcOvervoltage)
        } else if state.v_dc < prot.v_dc_under {
            Some(TripCause::DcUndervoltage)
        } else {
            None
        };
        match cause {
            Some(cause) => {
                let since = *state.dc_excursion_since.get_or_insert(state.t);
                if state.t - since >= prot.uv_ov_delay_s {
                    return TripStatus::tripped(cause, state.t);
                }
            }
            None => state.dc_excursion_since = None,
        }
    }
    TripStatus::ARMED
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::converter::{ConverterParams, TripState};

    fn filled_state(p: &ConverterParams, level: f64) -> ConverterState {
        let dt = 1e-5;
        let mut s = ConverterState::with_bus(p, dt, p.v_dc_ref);
        for _ in 0..s.rms_buffer.capacity() {
            s.rms_buffer.push(level);
        }
        s.t = 0.2;
        s
    }

    #[test]
    fn below_threshold_stays_armed() {
        let p = ConverterParams::default();
        let mut s = filled_state(&p, 0.9 * p.protection.i_trip_rms);
        assert_eq!(check_protection(&mut s, &p).state, TripState::Armed);
    }

    #[test]
    fn above_threshold_trips_with_time() {
        let p = ConverterParams::default();
        let mut s = filled_state(&p, 1.1 * p.protection.i_trip_rms);
        let st = check_protection(&mut s, &p);
        assert_eq!(st.cause, TripCause::Overcurrent);
        assert_eq!(st.trip_time, Some(0.2));
    }

    #[test]
    fn partial_window_never_trips() {
        let p = ConverterParams::default();
        let mut s = ConverterState::with_bus(&p, 1e-5, p.v_dc_ref);
        s.rms_buffer.push(1e6);
        assert!(!check_protection(&mut s, &p).is_tripped());
    }

    #[test]
    fn latch_is_absorbing() {
        let p = ConverterParams::default();
        let mut s = filled_state(&p, 0.0);
        s.trip = TripStatus::tripped(TripCause::Overcurrent, 0.1);
        for _ in 0..10 {
            s.rms_buffer.push(0.0);
            assert_eq!(
                check_protection(&mut s, &p),
                TripStatus::tripped(TripCause::Overcurrent, 0.1)
            );
        }
    }

    #[test]
    fn dc_undervoltage_needs_persistence() {
        let mut p = ConverterParams::default();
        p.protection.dc_voltage_enabled = true;
        let mut s = filled_state(&p, 0.0);
        s.v_dc = p.protection.v_dc_under - 1.0;
        s.t = 1.0;
        assert!(!check_protection(&mut s, &p).is_tripped());
        s.t = 1.0 + 0.5 * p.protection.uv_ov_delay_s;
        assert!(!check_protection(&mut s, &p).is_tripped());
        s.t = 1.0 + p.protection.uv_ov_delay_s;
        assert_eq!(check_protection(&mut s, &p).cause, TripCause::DcUndervoltage);
    }

    #[test]
    fn dc_excursion_resets_when_back_in_band() {
        let mut p = ConverterParams::default();
        p.protection.dc_voltage_enabled = true;
        let mut s = filled_state(&p, 0.0);
        s.v_dc = p.protection.v_dc_over + 1.0;
        s.t = 1.0;
        check_protection(&mut s, &p);
        s.v_dc = p.v_dc_ref;
        s.t = 1.005;
        check_protection(&mut s, &p);
        s.v_dc = p.protection.v_dc_over + 1.0;
        s.t = 1.0 + p.protection.uv_ov_delay_s;
        assert!(!check_protection(&mut s, &p).is_tripped());
    }

    #[test]
    fn dc_protection_disabled_by_default() {
        let p = ConverterParams::default();
        let mut s = filled_state(&p, 0.0);
        s.v_dc = 10.0;
        s.t = 5.0;
        s.dc_excursion_since = Some(0.0);
        assert!(!check_protection(&mut s, &p).is_tripped());
    }
}
