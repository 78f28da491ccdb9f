/// PI speed regulator state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PIState {
    pub integral: f64,
    pub kp: f64,
    pub ki: f64,
    /// Anti-windup clamp on `integral`.
    pub integral_max: f64,
}

impl Default for PIState {
    fn default() -> Self {
        Self {
            integral: 0.0,
            kp: 0.8,
            ki: 2.0,
            integral_max: 2.0,
        }
    }
}

/// Returns the updated state and a normalized throttle command in `[0, 1]`.
pub fn pi_speed_update(pi: &PIState, setpoint: f64, measured: f64, dt: f64) -> (PIState, f64) {
    debug_assert!(dt > 0.0);
    let e = setpoint - measured;
    let integral = (pi.integral + e * dt).clamp(-pi.integral_max, pi.integral_max);
    let command = (pi.kp * e + pi.ki * integral).clamp(0.0, 1.0);
    (PIState { integral, ..*pi }, command)
}

/// First-order drive model: `dv/dt = (gain * throttle - v) / tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstOrderMotor {
    pub gain: f64,
    pub tau: f64,
    pub speed: f64,
}

impl FirstOrderMotor {
    pub fn new(gain: f64, tau: f64) -> Self {
        Self { gain, tau, speed: 0.0 }
    }

    pub fn step(&mut self, throttle: f64, dt: f64) -> f64 {
        self.speed += (self.gain * throttle - self.speed) / self.tau * dt;
        self.speed = self.speed.max(0.0);
        self.speed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_error_zero_command() {
        let (s, cmd) = pi_speed_update(&PIState::default(), 1.0, 1.0, 0.01);
        assert_eq!(cmd, 0.0);
        assert_eq!(s.integral, 0.0);
    }

    #[test]
    fn saturates_at_one() {
        let (_, cmd) = pi_speed_update(&PIState::default(), 10.0, 0.0, 0.01);
        assert_eq!(cmd, 1.0);
    }

    #[test]
    fn integral_is_clamped() {
        let mut s = PIState::default();
        for _ in 0..10_000 {
            s = pi_speed_update(&s, 10.0, 0.0, 0.01).0;
        }
        assert_eq!(s.integral, s.integral_max);
    }

    #[test]
    fn step_response_settles() {
        let dt = 0.01;
        let mut pi = PIState::default();
        let mut motor = FirstOrderMotor::new(2.0, 0.2);
        let mut settled_at = None;
        for i in 0..3000 {
            let (next, cmd) = pi_speed_update(&pi, 1.0, motor.speed, dt);
            pi = next;
            let v = motor.step(cmd, dt);
            let t = (i + 1) as f64 * dt;
            if (v - 1.0).abs() <= 0.05 {
                settled_at.get_or_insert(t);
            } else if t > 2.0 {
                panic!("left the 5% band at t={t}: v={v}");
            }
            assert!(v.is_finite() && v < 2.0);
        }
        assert!(settled_at.unwrap() < 2.0);
        assert!((motor.speed - 1.0).abs() < 1e-3);
    }
}
