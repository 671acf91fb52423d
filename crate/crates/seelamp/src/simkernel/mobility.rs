//! Node motion: static placements and the random-waypoint model. Positions
//! are piecewise-linear in time so the radio can evaluate connectivity at
//! the exact transmission instant.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::Position;
use crate::Millis;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MobilityKind {
    Static,
    RandomWaypoint {
        speed_min: f64,
        speed_max: f64,
        pause_ms: Millis,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityConfig {
    pub kind: MobilityKind,
    pub tick_ms: Millis,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self {
            kind: MobilityKind::Static,
            tick_ms: 100,
        }
    }
}

/// One node's current motion leg.
#[derive(Debug, Clone, Copy)]
pub enum Motion {
    /// Holding position; `until` is the end of a waypoint pause (none for
    /// static nodes).
    Paused {
        at: Position,
        until: Option<Millis>,
    },
    Moving {
        from: Position,
        to: Position,
        start: Millis,
        speed: f64,
    },
}

impl Motion {
    pub fn fixed(at: Position) -> Self {
        Motion::Paused { at, until: None }
    }

    /// Exact position at time `t`, linear along the active leg.
    pub fn position_at(&self, t: Millis) -> Position {
        match *self {
            Motion::Paused { at, .. } => at,
            Motion::Moving {
                from,
                to,
                start,
                speed,
            } => {
                let elapsed_s = (t.saturating_sub(start)) as f64 / 1000.0;
                let total = crate::geometry::distance(from, to);
                if total <= f64::EPSILON {
                    return to;
                }
                let traveled = (speed * elapsed_s).min(total);
                let frac = traveled / total;
                Position::new(
                    from.x + (to.x - from.x) * frac,
                    from.y + (to.y - from.y) * frac,
                )
                .unwrap_or(to)
            }
        }
    }

    pub fn speed_at(&self, t: Millis) -> f64 {
        match *self {
            Motion::Paused { .. } => 0.0,
            Motion::Moving {
                from,
                to,
                start,
                speed,
            } => {
                let total = crate::geometry::distance(from, to);
                let elapsed_s = (t.saturating_sub(start)) as f64 / 1000.0;
                if speed * elapsed_s >= total {
                    0.0
                } else {
                    speed
                }
            }
        }
    }

    fn arrived(&self, t: Millis) -> bool {
        match *self {
            Motion::Paused { .. } => false,
            Motion::Moving {
                from,
                to,
                start,
                speed,
            } => {
                let total = crate::geometry::distance(from, to);
                speed * ((t.saturating_sub(start)) as f64 / 1000.0) >= total
            }
        }
    }

    /// Advances the waypoint state machine at a mobility tick. Draw order is
    /// fixed (waypoint x, y, then speed) so runs replay exactly.
    pub fn step(
        &mut self,
        now: Millis,
        cfg: &MobilityConfig,
        area: (f64, f64),
        rng: &mut ChaCha8Rng,
    ) {
        let MobilityKind::RandomWaypoint {
            speed_min,
            speed_max,
            pause_ms,
        } = cfg.kind
        else {
            return;
        };
        match *self {
            Motion::Moving { .. } if self.arrived(now) => {
                let here = self.position_at(now);
                if pause_ms == 0 {
                    *self = draw_leg(here, now, speed_min, speed_max, area, rng);
                } else {
                    *self = Motion::Paused {
                        at: here,
                        until: Some(now + pause_ms),
                    };
                }
            }
            Motion::Paused { at, until } => {
                let expired = until.map(|u| u <= now).unwrap_or(true);
                if expired {
                    *self = draw_leg(at, now, speed_min, speed_max, area, rng);
                }
            }
            _ => {}
        }
    }
}

fn draw_leg(
    from: Position,
    now: Millis,
    speed_min: f64,
    speed_max: f64,
    area: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Motion {
    let x = rng.random_range(0.0..=area.0);
    let y = rng.random_range(0.0..=area.1);
    let speed = if speed_max > speed_min {
        rng.random_range(speed_min..=speed_max)
    } else {
        speed_min
    };
    let to = Position::new(x, y).unwrap();
    if speed <= 0.0 || to == from {
        return Motion::Paused {
            at: from,
            until: Some(now),
        };
    }
    Motion::Moving {
        from,
        to,
        start: now,
        speed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn p(x: f64, y: f64) -> Position {
        Position::new(x, y).unwrap()
    }

    #[test]
    fn zero_speed_never_moves() {
        let cfg = MobilityConfig {
            kind: MobilityKind::RandomWaypoint {
                speed_min: 0.0,
                speed_max: 0.0,
                pause_ms: 0,
            },
            tick_ms: 100,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = Motion::fixed(p(10.0, 10.0));
        for t in (0..10_000).step_by(100) {
            m.step(t, &cfg, (1000.0, 1000.0), &mut rng);
            assert_eq!(m.position_at(t), p(10.0, 10.0));
        }
    }

    #[test]
    fn zero_pause_draws_new_leg_immediately() {
        let cfg = MobilityConfig {
            kind: MobilityKind::RandomWaypoint {
                speed_min: 5.0,
                speed_max: 5.0,
                pause_ms: 0,
            },
            tick_ms: 100,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = Motion::fixed(p(0.0, 0.0));
        m.step(0, &cfg, (100.0, 100.0), &mut rng);
        assert!(matches!(m, Motion::Moving { .. }));
    }

    #[test]
    fn leg_kinematics_match_closed_form() {
        let m = Motion::Moving {
            from: p(0.0, 0.0),
            to: p(300.0, 400.0),
            start: 1_000,
            speed: 10.0,
        };
        // After 20 s at 10 m/s: 200 m along a 500 m leg, direction (0.6, 0.8).
        let got = m.position_at(21_000);
        assert!((got.x - 120.0).abs() < 1e-6);
        assert!((got.y - 160.0).abs() < 1e-6);
        // Past the end of the leg the node sits at the waypoint.
        let end = m.position_at(80_000);
        assert_eq!(end, p(300.0, 400.0));
    }

    #[test]
    fn static_config_never_steps() {
        let cfg = MobilityConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = Motion::fixed(p(5.0, 5.0));
        m.step(0, &cfg, (100.0, 100.0), &mut rng);
        assert!(matches!(m, Motion::Paused { until: None, .. }));
    }
}
