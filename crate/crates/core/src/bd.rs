//! Fixed-timestep Brownian dynamics reference for the pair model.
//!
//! Particles carry explicit positions on an analytic convex domain. Each
//! step applies Gaussian increments (per-axis variance `2 D dt`) with
//! mirror-reflecting walls, then evaluates reactions at the end-of-step
//! positions: unbound A-B pairs bind with probability `1 - exp(-k dt)` at
//! the pointwise kernel rate, and complexes unbind with probability
//! `1 - exp(-mu dt)`, rejecting placements that leave the domain. This is
//! an independent route to the same physical model as the lattice solver,
//! kept deliberately free of mesh machinery.

use rand::Rng;
use rand_distr::{Poisson, StandardNormal};

use crate::geom::Point;
use crate::rates::Interaction;
use crate::ssa::Flow;

/// Analytic simulation domains.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Domain {
    /// `[0, l] x [0, l]`
    Square { l: f64 },
    /// Disk of radius `r` centered at the origin.
    Disk { r: f64 },
}

impl Domain {
    pub fn contains(&self, p: Point) -> bool {
        match *self {
            Domain::Square { l } => p.x >= 0.0 && p.x <= l && p.y >= 0.0 && p.y <= l,
            Domain::Disk { r } => p.norm2() <= r * r,
        }
    }

    pub fn area(&self) -> f64 {
        match *self {
            Domain::Square { l } => l * l,
            Domain::Disk { r } => std::f64::consts::PI * r * r,
        }
    }

    /// Mirror reflection across the boundary, iterated until inside.
    pub fn reflect(&self, p: Point) -> Point {
        match *self {
            Domain::Square { l } => Point::new(fold(p.x, l), fold(p.y, l)),
            Domain::Disk { r } => {
                let mut q = p;
                let mut n = q.norm();
                while n > r {
                    // A negative scale flips through the center, which is
                    // where the reflected radial coordinate lands.
                    q = q.scale((2.0 * r - n) / n);
                    n = (2.0 * r - n).abs();
                }
                q
            }
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Point {
        match *self {
            Domain::Square { l } => Point::new(l * rng.gen::<f64>(), l * rng.gen::<f64>()),
            Domain::Disk { r } => {
                let rad = r * rng.gen::<f64>().sqrt();
                let th = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
                Point::new(rad * th.cos(), rad * th.sin())
            }
        }
    }
}

// One-dimensional mirror fold onto [0, l].
fn fold(mut x: f64, l: f64) -> f64 {
    while x < 0.0 || x > l {
        if x < 0.0 {
            x = -x;
        }
        if x > l {
            x = 2.0 * l - x;
        }
    }
    x
}

/// How complexes release their pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unbinding {
    /// Both products at the complex position; never rejected.
    Point,
    /// A uniform in the ball of radius `(1 - gamma) rb` around the complex,
    /// B by reflection through it; rejected if either lands outside.
    Uniform { rb: f64 },
}

#[derive(Clone, Debug)]
pub struct BDConfig {
    pub domain: Domain,
    pub dt: f64,
    pub d_a: f64,
    pub d_b: f64,
    pub d_c: f64,
    pub interaction: Interaction,
    pub unbinding: Unbinding,
    pub mu: f64,
    /// Product position weight: `z = gamma x + (1 - gamma) y`.
    pub gamma: f64,
    /// Zeroth-order source of complexes, placed uniformly in the domain.
    pub k_prod_c: f64,
    /// First-order removal rates for free A and B particles.
    pub k_decay_a: f64,
    pub k_decay_b: f64,
}

impl BDConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.dt > 0.0) {
            return Err("dt must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err("gamma must be in [0, 1]".into());
        }
        if self.d_a < 0.0 || self.d_b < 0.0 || self.d_c < 0.0 {
            return Err("diffusion constants must be >= 0".into());
        }
        if !(self.mu >= 0.0) {
            return Err("mu must be >= 0".into());
        }
        if !(self.k_prod_c >= 0.0 && self.k_decay_a >= 0.0 && self.k_decay_b >= 0.0) {
            return Err("production and decay rates must be >= 0".into());
        }
        if matches!(self.interaction, Interaction::Rdme { .. }) {
            return Err("the lattice interaction has no continuous-space form".into());
        }
        Ok(())
    }

    /// The timestep must resolve the fastest reaction; warn past 0.2.
    pub fn timestep_warning(&self) -> Option<String> {
        let peak = match self.interaction {
            Interaction::Doi { lambda, .. } => lambda,
            Interaction::Gaussian { .. } => self.interaction.rate_at(0.0),
            Interaction::Rdme { .. } => 0.0,
        };
        let fastest = peak.max(self.mu);
        if fastest * self.dt > 0.2 {
            Some(format!(
                "rate * dt = {:.3} exceeds 0.2; reaction probabilities are poorly resolved",
                fastest * self.dt
            ))
        } else {
            None
        }
    }
}

/// Particle positions by species plus the current time.
#[derive(Clone, Debug, PartialEq)]
pub struct BDState {
    pub t: f64,
    pub a: Vec<Point>,
    pub b: Vec<Point>,
    pub c: Vec<Point>,
}

impl BDState {
    pub fn new() -> Self {
        BDState {
            t: 0.0,
            a: Vec::new(),
            b: Vec::new(),
            c: Vec::new(),
        }
    }
}

impl Default for BDState {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BDEvent {
    Bind { x: Point, y: Point, z: Point },
    Unbind { z: Point, x: Point, y: Point },
    UnbindRejected { z: Point },
    Produce { z: Point },
    DecayA { x: Point },
    DecayB { y: Point },
}

/// Moves every particle by one Gaussian increment and reflects it back
/// into the domain. `d == 0` leaves positions untouched.
pub fn bd_step<R: Rng>(domain: &Domain, pts: &mut [Point], d: f64, dt: f64, rng: &mut R) {
    if d == 0.0 {
        return;
    }
    let s = (2.0 * d * dt).sqrt();
    for p in pts.iter_mut() {
        let gx: f64 = rng.sample(StandardNormal);
        let gy: f64 = rng.sample(StandardNormal);
        *p = domain.reflect(Point::new(p.x + s * gx, p.y + s * gy));
    }
}

pub struct BDRunResult {
    pub final_state: BDState,
    /// One state per requested observation time, in order; shorter if the
    /// observer stopped the run early.
    pub snapshots: Vec<BDState>,
}

/// Runs the fixed-step dynamics from `state` to `t_final`, recording
/// snapshots at the sorted `obs_times` and reporting reaction events.
pub fn bd_run<R: Rng, F: FnMut(f64, &BDEvent, &BDState) -> Flow>(
    cfg: &BDConfig,
    mut state: BDState,
    t_final: f64,
    obs_times: &[f64],
    rng: &mut R,
    mut on_event: F,
) -> BDRunResult {
    debug_assert!(cfg.validate().is_ok());
    debug_assert!(obs_times.windows(2).all(|w| w[0] <= w[1]));
    let mut snapshots = Vec::with_capacity(obs_times.len());
    let mut next_obs = 0;
    let mut events: Vec<BDEvent> = Vec::new();
    'steps: while state.t < t_final {
        let h = cfg.dt.min(t_final - state.t);
        let t_next = state.t + h;
        while next_obs < obs_times.len() && obs_times[next_obs] < t_next {
            let mut snap = state.clone();
            snap.t = obs_times[next_obs];
            snapshots.push(snap);
            next_obs += 1;
        }
        bd_step(&cfg.domain, &mut state.a, cfg.d_a, h, rng);
        bd_step(&cfg.domain, &mut state.b, cfg.d_b, h, rng);
        bd_step(&cfg.domain, &mut state.c, cfg.d_c, h, rng);
        state.t = t_next;
        events.clear();

        // Linear removal is exact at any step size: each particle is thinned
        // independently. Pairs released later this step are exempt until the
        // next one.
        if cfg.k_decay_a > 0.0 && !state.a.is_empty() {
            let p = 1.0 - (-cfg.k_decay_a * h).exp();
            state.a.retain(|&x| {
                let keep = rng.gen::<f64>() >= p;
                if !keep {
                    events.push(BDEvent::DecayA { x });
                }
                keep
            });
        }
        if cfg.k_decay_b > 0.0 && !state.b.is_empty() {
            let p = 1.0 - (-cfg.k_decay_b * h).exp();
            state.b.retain(|&y| {
                let keep = rng.gen::<f64>() >= p;
                if !keep {
                    events.push(BDEvent::DecayB { y });
                }
                keep
            });
        }

        // Unbinding before binding: released pairs may immediately re-enter
        // the binding test below (an O(dt^2) ordering effect).
        let p_un = 1.0 - (-cfg.mu * h).exp();
        if p_un > 0.0 && !state.c.is_empty() {
            let mut kept = Vec::with_capacity(state.c.len());
            for &z in &state.c {
                if rng.gen::<f64>() >= p_un {
                    kept.push(z);
                    continue;
                }
                match cfg.unbinding {
                    Unbinding::Point => {
                        state.a.push(z);
                        state.b.push(z);
                        events.push(BDEvent::Unbind { z, x: z, y: z });
                    }
                    Unbinding::Uniform { rb } => {
                        let radius = (1.0 - cfg.gamma) * rb;
                        let r = radius * rng.gen::<f64>().sqrt();
                        let th = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
                        let x = Point::new(z.x + r * th.cos(), z.y + r * th.sin());
                        let y = if 1.0 - cfg.gamma < 1e-12 {
                            z
                        } else {
                            Point::new(
                                (z.x - cfg.gamma * x.x) / (1.0 - cfg.gamma),
                                (z.y - cfg.gamma * x.y) / (1.0 - cfg.gamma),
                            )
                        };
                        if cfg.domain.contains(x) && cfg.domain.contains(y) {
                            state.a.push(x);
                            state.b.push(y);
                            events.push(BDEvent::Unbind { z, x, y });
                        } else {
                            kept.push(z);
                            events.push(BDEvent::UnbindRejected { z });
                        }
                    }
                }
            }
            state.c = kept;
        }

        // Binding pass: brute force over unconsumed pairs.
        let mut a_used = vec![false; state.a.len()];
        let mut b_used = vec![false; state.b.len()];
        let mut bound_any = false;
        for ai in 0..state.a.len() {
            for bi in 0..state.b.len() {
                if a_used[ai] || b_used[bi] {
                    continue;
                }
                let (x, y) = (state.a[ai], state.b[bi]);
                let rate = cfg.interaction.rate_at(x.dist(y));
                if rate <= 0.0 {
                    continue;
                }
                if rng.gen::<f64>() < 1.0 - (-rate * h).exp() {
                    let z = x.scale(cfg.gamma).add(y.scale(1.0 - cfg.gamma));
                    // A convex combination stays inside a convex domain,
                    // but the model rejects out-of-domain products anyway.
                    if !cfg.domain.contains(z) {
                        continue;
                    }
                    a_used[ai] = true;
                    b_used[bi] = true;
                    bound_any = true;
                    state.c.push(z);
                    events.push(BDEvent::Bind { x, y, z });
                }
            }
        }
        if bound_any {
            let mut keep = a_used.iter().map(|u| !u);
            state.a.retain(|_| keep.next().unwrap());
            let mut keep = b_used.iter().map(|u| !u);
            state.b.retain(|_| keep.next().unwrap());
        }

        // The source adds complexes at the step boundary; a Poisson count
        // per step is exact for a constant-rate birth stream.
        if cfg.k_prod_c > 0.0 {
            let births = rng.sample(Poisson::new(cfg.k_prod_c * h).unwrap()) as u64;
            for _ in 0..births {
                let z = cfg.domain.sample(rng);
                state.c.push(z);
                events.push(BDEvent::Produce { z });
            }
        }

        for ev in &events {
            if on_event(state.t, ev, &state) == Flow::Stop {
                break 'steps;
            }
        }
    }
    while next_obs < obs_times.len() && obs_times[next_obs] <= t_final && state.t >= t_final {
        let mut snap = state.clone();
        snap.t = obs_times[next_obs];
        snapshots.push(snap);
        next_obs += 1;
    }
    BDRunResult {
        final_state: state,
        snapshots,
    }
}
