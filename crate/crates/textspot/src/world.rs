//! Synthetic scene generation with a controllable domain shift.
//!
//! Scenes live on a grid of candidate cells. Each word occupies one cell
//! with a jittered box and is assigned to a random query slot; the slot's
//! feature vector deterministically encodes the box geometry, an
//! objectness flag, the word length, and the characters as sign bits,
//! plus Gaussian noise. Empty slots carry noise only.
//!
//! Domain A ("synthetic") uses the raw features. Domain B ("real")
//! applies a fixed orthogonal rotation and bias to the content dimensions
//! (everything past the box geometry), standing in for the appearance
//! shift between rendered and real imagery: content decoding breaks until
//! the model adapts, while the spatial geometry of scenes is shared, as
//! it is between synthetic and real photographs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alphabet::{Alphabet, Transcription};
use crate::geometry::CenterSizeBox;
use crate::scene::{GroundTruthInstance, Scene, Supervision};
use crate::{Error, Result};

/// Which side of the domain shift a scene is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    /// Fully-annotated source domain.
    A,
    /// Shifted target domain, weakly annotated in the experiments.
    B,
}

impl Domain {
    fn letter(self) -> char {
        match self {
            Domain::A => 'a',
            Domain::B => 'b',
        }
    }
}

/// Configuration of the synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    /// Grid of `grid_size^2` candidate cells.
    pub grid_size: usize,
    /// Inclusive range of words per scene.
    pub words_per_scene: (usize, usize),
    /// Inclusive range of word lengths.
    pub word_len: (usize, usize),
    pub alphabet: Alphabet,
    /// Standard deviation of the per-dimension feature noise.
    pub feature_noise: f64,
    /// Number of query slots per scene.
    pub num_queries: usize,
    pub feature_dim: usize,
    /// Recognition unroll length; must exceed the longest word.
    pub max_word_len: usize,
    /// Seed of the fixed domain-B rotation and bias.
    pub shift_seed: u64,
    /// Magnitude of the domain-B bias.
    pub shift_bias: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            grid_size: 3,
            words_per_scene: (1, 4),
            word_len: (2, 5),
            alphabet: Alphabet::new("abcdefgh".chars()).expect("static alphabet"),
            feature_noise: 0.01,
            num_queries: 8,
            feature_dim: 24,
            max_word_len: 6,
            shift_seed: 0xD0A11,
            shift_bias: 0.3,
        }
    }
}

/// Number of geometry dimensions at the front of a feature vector
/// (`cx, cy, w, h`); the domain shift leaves them untouched.
const GEOMETRY_DIMS: usize = 4;

/// First feature dimension the domain shift touches: everything past the
/// geometry and the objectness/length flags, which is where the word's
/// appearance (its character encoding) lives. Real-versus-rendered
/// imagery shares its spatial statistics and differs in appearance, and
/// the shift mirrors that.
const SHIFT_START: usize = GEOMETRY_DIMS + 2;

impl WorldConfig {
    fn bits_per_symbol(&self) -> usize {
        let n = self.alphabet.num_symbols();
        (usize::BITS - (n - 1).leading_zeros()).max(1) as usize
    }

    /// Feature dimensions consumed by the deterministic encoding.
    fn used_dims(&self) -> usize {
        GEOMETRY_DIMS + 2 + self.bits_per_symbol() * self.word_len.1
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size == 0 {
            return Err(Error::Validation("grid_size must be positive".into()));
        }
        let (wmin, wmax) = self.words_per_scene;
        if wmin == 0 || wmin > wmax {
            return Err(Error::Validation(format!(
                "words_per_scene range ({wmin}, {wmax}) is invalid"
            )));
        }
        if wmax > self.num_queries {
            return Err(Error::Validation(format!(
                "words_per_scene max {wmax} exceeds num_queries {}",
                self.num_queries
            )));
        }
        if wmax > self.grid_size * self.grid_size {
            return Err(Error::Validation(format!(
                "words_per_scene max {wmax} exceeds the {} grid cells",
                self.grid_size * self.grid_size
            )));
        }
        let (lmin, lmax) = self.word_len;
        if lmin == 0 || lmin > lmax {
            return Err(Error::Validation(format!(
                "word_len range ({lmin}, {lmax}) is invalid"
            )));
        }
        if lmax + 1 > self.max_word_len {
            return Err(Error::Validation(format!(
                "word_len max {lmax} plus EOS does not fit max_word_len {}",
                self.max_word_len
            )));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(Error::Validation(format!(
                "feature_noise must be non-negative, got {}",
                self.feature_noise
            )));
        }
        if self.feature_dim < self.used_dims() {
            return Err(Error::Validation(format!(
                "feature_dim {} cannot hold the {}-dim encoding",
                self.feature_dim,
                self.used_dims()
            )));
        }
        if !(self.shift_bias.is_finite()) {
            return Err(Error::Validation("shift_bias must be finite".into()));
        }
        Ok(())
    }

    /// The fixed rotation-plus-bias applied to domain-B content
    /// dimensions, derived deterministically from `shift_seed`.
    pub fn domain_shift(&self) -> DomainShift {
        let dim = self.feature_dim - SHIFT_START;
        let mut rng = ChaCha8Rng::seed_from_u64(self.shift_seed);
        let rotation = random_signed_permutation(&mut rng, dim);
        let bias = (0..dim)
            .map(|_| self.shift_bias * rng.gen_range(-1.0..1.0))
            .collect();
        DomainShift {
            dim,
            rotation,
            bias,
        }
    }
}

/// A fixed orthogonal rotation plus bias on the content dimensions.
#[derive(Debug, Clone)]
pub struct DomainShift {
    dim: usize,
    /// Row-major `dim x dim` orthogonal matrix.
    rotation: Vec<f64>,
    bias: Vec<f64>,
}

impl DomainShift {
    fn apply(&self, feature: &mut [f64]) {
        let content = &feature[SHIFT_START..];
        debug_assert_eq!(content.len(), self.dim);
        let mut out = self.bias.clone();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.rotation[i * self.dim..(i + 1) * self.dim];
            for (r, c) in row.iter().zip(content) {
                *o += r * c;
            }
        }
        feature[SHIFT_START..].copy_from_slice(&out);
    }
}

/// A random signed permutation: orthogonal, and it maps the sign-bit
/// feature distribution onto itself. Geometry decoding therefore
/// transfers across the shift the way spatial structure transfers
/// between rendered and real imagery, while the character encoding is
/// scrambled completely.
fn random_signed_permutation(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let mut perm: Vec<usize> = (0..dim).collect();
    for i in (1..dim).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    let mut matrix = vec![0.0; dim * dim];
    for (i, &j) in perm.iter().enumerate() {
        matrix[i * dim + j] = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    }
    matrix
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    (-2.0 * u1.ln()).sqrt() * u2.cos()
}

/// Generate one fully-annotated scene. Deterministic given the seed; the
/// ground truth is identical across domains, domain B only shifts the
/// features.
pub fn generate_scene(world: &WorldConfig, domain: Domain, seed: u64) -> Result<Scene> {
    world.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = world.grid_size;
    let n = world.num_queries;
    let word_count = rng.gen_range(world.words_per_scene.0..=world.words_per_scene.1);

    let cells = sample_distinct(&mut rng, g * g, word_count);
    let slots = sample_distinct(&mut rng, n, word_count);

    let mut features = vec![vec![0.0; world.feature_dim]; n];
    let mut ground_truth = Vec::with_capacity(word_count);
    for k in 0..word_count {
        let len = rng.gen_range(world.word_len.0..=world.word_len.1);
        let indices: Vec<usize> = (0..len)
            .map(|_| rng.gen_range(0..world.alphabet.num_symbols()))
            .collect();
        let cell = cells[k];
        let (row, col) = (cell / g, cell % g);
        let gf = g as f64;
        // jitter and size large enough that neighboring words overlap at
        // times, so box criteria alone cannot always disambiguate them
        let bbox = CenterSizeBox {
            cx: (col as f64 + 0.5 + rng.gen_range(-0.15..0.15)) / gf,
            cy: (row as f64 + 0.5 + rng.gen_range(-0.15..0.15)) / gf,
            w: rng.gen_range(0.7..1.05) / gf,
            h: rng.gen_range(0.7..1.05) / gf,
        };
        encode_word(world, &bbox, &indices, &mut features[slots[k]]);
        let transcription = Transcription::new(indices, &world.alphabet)?;
        ground_truth.push(GroundTruthInstance::text(bbox, transcription));
    }

    if world.feature_noise > 0.0 {
        for f in &mut features {
            for v in f.iter_mut() {
                *v += world.feature_noise * gauss(&mut rng);
            }
        }
    }

    if domain == Domain::B {
        let shift = world.domain_shift();
        for f in &mut features {
            shift.apply(f);
        }
    }

    Ok(Scene {
        scene_id: format!("{}{seed:08x}", domain.letter()),
        features,
        ground_truth,
        supervision: Supervision::Full,
    })
}

/// Generate a batch of scenes with consecutive seeds.
pub fn generate_scenes(
    world: &WorldConfig,
    domain: Domain,
    base_seed: u64,
    count: usize,
) -> Result<Vec<Scene>> {
    (0..count)
        .map(|i| generate_scene(world, domain, base_seed.wrapping_add(i as u64)))
        .collect()
}

fn sample_distinct(rng: &mut ChaCha8Rng, universe: usize, count: usize) -> Vec<usize> {
    debug_assert!(count <= universe);
    let mut pool: Vec<usize> = (0..universe).collect();
    for i in 0..count {
        let j = rng.gen_range(i..universe);
        pool.swap(i, j);
    }
    pool.truncate(count);
    pool
}

fn encode_word(world: &WorldConfig, bbox: &CenterSizeBox, indices: &[usize], out: &mut [f64]) {
    out[..GEOMETRY_DIMS].copy_from_slice(&bbox.as_array());
    out[GEOMETRY_DIMS] = 1.0; // objectness
    out[GEOMETRY_DIMS + 1] = indices.len() as f64 / world.max_word_len as f64;
    let bits = world.bits_per_symbol();
    for (k, &c) in indices.iter().enumerate() {
        for b in 0..bits {
            let base = GEOMETRY_DIMS + 2 + k * bits + b;
            out[base] = if (c >> b) & 1 == 1 { 1.0 } else { -1.0 };
        }
    }
}
