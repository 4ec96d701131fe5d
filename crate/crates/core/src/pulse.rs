//! Drive envelopes and their parameter derivatives.
//!
//! Coefficients are evaluated at complex times so that complex Trotter
//! stages can sample the analytic continuation of the drive. The window is
//! selected by the real part of the time.

use std::f64::consts::PI;

use crate::device::{PulseField, PulseSpec, PulseType};
use crate::linalg::{C64, ZERO};

/// Envelope value and its derivatives with respect to amp, length, delay.
struct Envelope {
    value: C64,
    d_amp: C64,
    d_length: C64,
    d_delay: C64,
}

fn envelope(p: &PulseSpec, t: C64) -> Envelope {
    let u = t - p.delay;
    let zero = Envelope {
        value: ZERO,
        d_amp: ZERO,
        d_length: ZERO,
        d_delay: ZERO,
    };
    if u.re < 0.0 || u.re > p.length {
        return zero;
    }
    let l = p.length;
    match (p.pulse_type, p.t_ramp) {
        (PulseType::Cos, _) | (PulseType::Rampcos, None) => {
            let w = 2.0 * PI / l;
            let shape = (C64::new(1.0, 0.0) - (u * w).cos()) * 0.5;
            let s = (u * w).sin();
            Envelope {
                value: shape * p.amp,
                d_amp: shape,
                d_length: -s * u * (p.amp * PI / (l * l)),
                d_delay: -s * (p.amp * PI / l),
            }
        }
        (PulseType::Rampcos, Some(tr)) => {
            let w = PI / tr;
            if u.re < tr {
                let shape = (C64::new(1.0, 0.0) - (u * w).cos()) * 0.5;
                Envelope {
                    value: shape * p.amp,
                    d_amp: shape,
                    d_length: ZERO,
                    d_delay: -(u * w).sin() * (p.amp * 0.5 * w),
                }
            } else if u.re > l - tr {
                let v = -u + l;
                let shape = (C64::new(1.0, 0.0) - (v * w).cos()) * 0.5;
                let s = (v * w).sin() * (p.amp * 0.5 * w);
                Envelope {
                    value: shape * p.amp,
                    d_amp: shape,
                    d_length: s,
                    d_delay: s,
                }
            } else {
                Envelope {
                    value: C64::new(p.amp, 0.0),
                    d_amp: C64::new(1.0, 0.0),
                    d_length: ZERO,
                    d_delay: ZERO,
                }
            }
        }
    }
}

/// Drive coefficient `E(t) cos(omega_d t + phase)`.
pub fn coefficient(p: &PulseSpec, t: C64) -> C64 {
    let env = envelope(p, t);
    if env.value == ZERO {
        return ZERO;
    }
    env.value * (t * p.omega_d + p.phase).cos()
}

/// Derivatives of the drive coefficient in `PulseField::ALL` order.
pub fn coefficient_gradient(p: &PulseSpec, t: C64) -> [C64; 5] {
    let env = envelope(p, t);
    let arg = t * p.omega_d + p.phase;
    let (c, s) = (arg.cos(), arg.sin());
    let mut out = [ZERO; 5];
    for (slot, field) in out.iter_mut().zip(PulseField::ALL) {
        *slot = match field {
            PulseField::Amp => env.d_amp * c,
            PulseField::OmegaD => -env.value * s * t,
            PulseField::Phase => -env.value * s,
            PulseField::Length => env.d_length * c,
            PulseField::Delay => env.d_delay * c,
        };
    }
    out
}
