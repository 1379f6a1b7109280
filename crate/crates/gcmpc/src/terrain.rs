//! Ground heightfield: flat, piecewise-linear slope sequences, and
//! domain-randomized bumpy variants built from seeded tile grids.
//!
//! Height varies only with the world x coordinate; ramps are orthogonal to
//! the x axis. Bump tiles add a piecewise-constant offset on top of the base
//! profile. Slope queries always ignore bump tiles: the slope angle is a
//! nominal terrain signal, bumps act as unmodeled disturbance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Extent of the generated bump tile grid in world coordinates.
const TILE_X_RANGE: (f64, f64) = (-20.0, 60.0);
const TILE_Y_RANGE: (f64, f64) = (-20.0, 20.0);

/// Default bump tile edge length, comparable to the wheelbase so tile
/// transitions occur within an episode.
pub const DEFAULT_TILE_SIZE: f64 = 0.25;

#[derive(Debug, Error)]
pub enum TerrainError {
    #[error("tile_size must be positive, got {0}")]
    NonPositiveTileSize(f64),
    #[error("bump_height_max must be nonnegative, got {0}")]
    NegativeBumpHeight(f64),
    #[error("slope segments must have strictly increasing start positions")]
    UnorderedSegments,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrainKind {
    Flat,
    SlopeSequence,
    RandomBumpy,
}

/// One piecewise-linear segment: grade applies for x >= start.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct Segment {
    start: f64,
    grade: f64,
    /// Base height at the segment start, accumulated so the profile is
    /// continuous across segment joins.
    height: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TileGrid {
    tile_size: f64,
    bump_height_max: f64,
    seed: u64,
    nx: usize,
    ny: usize,
    offsets: Vec<f64>,
}

impl TileGrid {
    fn generate(seed: u64, bump_height_max: f64, tile_size: f64) -> Self {
        let nx = ((TILE_X_RANGE.1 - TILE_X_RANGE.0) / tile_size).ceil() as usize;
        let ny = ((TILE_Y_RANGE.1 - TILE_Y_RANGE.0) / tile_size).ceil() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let offsets = (0..nx * ny)
            .map(|_| rng.gen::<f64>() * bump_height_max)
            .collect();
        Self {
            tile_size,
            bump_height_max,
            seed,
            nx,
            ny,
            offsets,
        }
    }

    fn offset_at(&self, x: f64, y: f64) -> f64 {
        let ix = ((x - TILE_X_RANGE.0) / self.tile_size).floor();
        let iy = ((y - TILE_Y_RANGE.0) / self.tile_size).floor();
        if ix < 0.0 || iy < 0.0 {
            return 0.0;
        }
        let (ix, iy) = (ix as usize, iy as usize);
        if ix >= self.nx || iy >= self.ny {
            return 0.0;
        }
        self.offsets[iy * self.nx + ix]
    }
}

/// Immutable heightfield; safe for concurrent reads by parallel rollouts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TerrainProfile {
    kind: TerrainKind,
    segments: Vec<Segment>,
    tiles: Option<TileGrid>,
}

impl TerrainProfile {
    pub fn flat() -> Self {
        Self {
            kind: TerrainKind::Flat,
            segments: vec![Segment {
                start: 0.0,
                grade: 0.0,
                height: 0.0,
            }],
            tiles: None,
        }
    }

    /// Builds a continuous piecewise-linear profile from (start_x, grade)
    /// pairs. Height is zero before the first segment start.
    pub fn slope_sequence(segments: &[(f64, f64)]) -> Result<Self, TerrainError> {
        if segments.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(TerrainError::UnorderedSegments);
        }
        let mut built = Vec::with_capacity(segments.len());
        let mut height = 0.0;
        let mut prev: Option<(f64, f64)> = None;
        for &(start, grade) in segments {
            if let Some((p_start, p_grade)) = prev {
                height += p_grade * (start - p_start);
            }
            built.push(Segment {
                start,
                grade,
                height,
            });
            prev = Some((start, grade));
        }
        if built.is_empty() {
            return Ok(Self::flat());
        }
        Ok(Self {
            kind: TerrainKind::SlopeSequence,
            segments: built,
            tiles: None,
        })
    }

    pub fn kind(&self) -> TerrainKind {
        self.kind
    }

    /// Adds seeded uniform bump tiles on top of this profile's base slope.
    /// Same (seed, parameters) yields an identical tile array.
    pub fn randomize(
        &self,
        seed: u64,
        bump_height_max: f64,
        tile_size: f64,
    ) -> Result<TerrainProfile, TerrainError> {
        if tile_size <= 0.0 {
            return Err(TerrainError::NonPositiveTileSize(tile_size));
        }
        if bump_height_max < 0.0 {
            return Err(TerrainError::NegativeBumpHeight(bump_height_max));
        }
        Ok(TerrainProfile {
            kind: TerrainKind::RandomBumpy,
            segments: self.segments.clone(),
            tiles: Some(TileGrid::generate(seed, bump_height_max, tile_size)),
        })
    }

    fn base_height(&self, x: f64) -> f64 {
        let seg = match self
            .segments
            .iter()
            .rev()
            .find(|s| x >= s.start)
        {
            Some(s) => s,
            // Before the first segment the profile is level at the first
            // segment's start height.
            None => return self.segments.first().map_or(0.0, |s| s.height),
        };
        seg.height + seg.grade * (x - seg.start)
    }

    fn grade_at(&self, x: f64) -> f64 {
        self.segments
            .iter()
            .rev()
            .find(|s| x >= s.start)
            .map_or(0.0, |s| s.grade)
    }

    /// Ground height: piecewise-linear base plus tile offset for RandomBumpy.
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        let base = self.base_height(x);
        match &self.tiles {
            Some(grid) => base + grid.offset_at(x, y),
            None => base,
        }
    }

    /// Slope angle experienced along `heading`, from the base profile only.
    /// Result lies in (-pi/2, pi/2).
    pub fn slope_along(&self, x: f64, _y: f64, heading: f64) -> f64 {
        (self.grade_at(x) * heading.cos()).atan()
    }

    /// `slope_along` evaluated at the point displaced by `lookahead` along
    /// the heading.
    pub fn slope_ahead(&self, x: f64, y: f64, heading: f64, lookahead: f64) -> f64 {
        debug_assert!(lookahead >= 0.0);
        let xa = x + lookahead * heading.cos();
        let ya = y + lookahead * heading.sin();
        self.slope_along(xa, ya, heading)
    }

    /// Terrain inclination felt by the wheels: central height difference over
    /// the contact span along the heading, including bump tiles. This is what
    /// the plant dynamics sees; `slope_along` stays bump-free for goal
    /// conditioning.
    pub fn effective_incline(&self, x: f64, y: f64, heading: f64, half_span: f64) -> f64 {
        let (dx, dy) = (heading.cos(), heading.sin());
        let ahead = self.height_at(x + half_span * dx, y + half_span * dy);
        let behind = self.height_at(x - half_span * dx, y - half_span * dy);
        ((ahead - behind) / (2.0 * half_span)).atan()
    }
}
