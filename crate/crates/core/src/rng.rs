//! Counter-based random streams.
//!
//! Every stochastic primitive in the simulator is a pure function of
//! `(root seed, replication, salt, purpose, key words)`. Draws are keyed by
//! what they are for — not by draw order — so two architectures simulated on
//! the same replication consume bit-identical primitives no matter how their
//! event sequences diverge. This is what makes paired (common-random-number)
//! comparisons pathwise meaningful.

/// Draw purposes. Each gets a disjoint key space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    /// Per-(interval, full index) change indicator.
    EnvChange,
    /// Per-(interval, full index) step sign.
    EnvSign,
    /// Per-(interval, full index) step magnitude.
    EnvMagnitude,
    /// Per-interval component pick for the single-change sampler.
    EnvPick,
    /// Per-(sensor, component, tick) measurement noise.
    Noise,
    /// Per-(sensor, verification index) backoff duration.
    Backoff,
    /// Scratch space for test oracles and Monte Carlo cross-checks.
    Oracle,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::EnvChange => 0x01,
            Purpose::EnvSign => 0x02,
            Purpose::EnvMagnitude => 0x03,
            Purpose::EnvPick => 0x04,
            Purpose::Noise => 0x05,
            Purpose::Backoff => 0x06,
            Purpose::Oracle => 0x07,
        }
    }
}

/// Handle on the keyed stream space of one replication.
///
/// `salt` distinguishes rejection-sampling attempts when building conditioned
/// scenarios; unconditioned runs use salt 0.
#[derive(Debug, Clone, Copy)]
pub struct Streams {
    root: u64,
    rep: u64,
    salt: u64,
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn mix2(state: u64, word: u64) -> u64 {
    splitmix(state ^ word.wrapping_mul(0xff51_afd7_ed55_8ccd))
}

impl Streams {
    pub fn new(root: u64, rep: u64) -> Self {
        Streams { root, rep, salt: 0 }
    }

    pub fn with_salt(root: u64, rep: u64, salt: u64) -> Self {
        Streams { root, rep, salt }
    }

    pub fn rep(&self) -> u64 {
        self.rep
    }

    pub fn salt(&self) -> u64 {
        self.salt
    }

    #[inline]
    fn word(&self, purpose: Purpose, a: u64, b: u64, c: u64, lane: u64) -> u64 {
        let mut z = splitmix(self.root);
        z = mix2(z, self.rep);
        z = mix2(z, self.salt);
        z = mix2(z, purpose.tag());
        z = mix2(z, a);
        z = mix2(z, b);
        z = mix2(z, c);
        mix2(z, lane)
    }

    /// Uniform on [0, 1).
    #[inline]
    pub fn uniform(&self, purpose: Purpose, a: u64, b: u64, c: u64) -> f64 {
        u64_to_unit(self.word(purpose, a, b, c, 0))
    }

    /// Standard normal via Box-Muller on two dedicated lanes.
    #[inline]
    pub fn normal(&self, purpose: Purpose, a: u64, b: u64, c: u64) -> f64 {
        // u1 in (0, 1] keeps the log finite.
        let u1 = (self.word(purpose, a, b, c, 1) >> 11) as f64 / ((1u64 << 53) as f64);
        let u1 = 1.0 - u1;
        let u2 = u64_to_unit(self.word(purpose, a, b, c, 2));
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// +1.0 or -1.0 with equal probability.
    #[inline]
    pub fn sign(&self, purpose: Purpose, a: u64, b: u64, c: u64) -> f64 {
        if self.word(purpose, a, b, c, 3) & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

#[inline]
fn u64_to_unit(z: u64) -> f64 {
    (z >> 11) as f64 / ((1u64 << 53) as f64)
}

/// Order-insensitive accumulator over consumed primitives, used to certify
/// that paired architecture runs saw identical draws.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DrawChecksum(u64);

impl DrawChecksum {
    pub fn absorb(&mut self, value: f64) {
        self.0 = self.0.wrapping_add(splitmix(value.to_bits()));
    }

    pub fn merge(&mut self, other: DrawChecksum) {
        self.0 = self.0.wrapping_add(other.0);
    }

    pub fn value(&self) -> u64 {
        self.0
    }
}
