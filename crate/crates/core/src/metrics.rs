//! Wall-clock time breakdowns and dihedral-angle quality reports.

use crate::delaunay::TetMesh;
use crate::geom;
use crate::image::{LabeledImage, BACKGROUND};
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Preprocess,
    Mesh,
    Pack,
    Unpack,
    Poll,
    Idle,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Preprocess,
        Category::Mesh,
        Category::Pack,
        Category::Unpack,
        Category::Poll,
        Category::Idle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Preprocess => "preprocess",
            Category::Mesh => "mesh",
            Category::Pack => "pack",
            Category::Unpack => "unpack",
            Category::Poll => "poll",
            Category::Idle => "idle",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TimerError {
    #[error("exit({exited:?}) does not match the open scope {open:?}")]
    Unbalanced { open: Option<Category>, exited: Category },
    #[error("scopes still open at finish: {0:?}")]
    StillOpen(Vec<Category>),
}

/// Seconds per category for one rank.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub rank: u32,
    pub preprocess: f64,
    pub mesh: f64,
    pub pack: f64,
    pub unpack: f64,
    pub poll: f64,
    pub idle: f64,
    pub wall: f64,
}

impl Breakdown {
    pub fn get(&self, c: Category) -> f64 {
        match c {
            Category::Preprocess => self.preprocess,
            Category::Mesh => self.mesh,
            Category::Pack => self.pack,
            Category::Unpack => self.unpack,
            Category::Poll => self.poll,
            Category::Idle => self.idle,
        }
    }

    fn slot(&mut self, c: Category) -> &mut f64 {
        match c {
            Category::Preprocess => &mut self.preprocess,
            Category::Mesh => &mut self.mesh,
            Category::Pack => &mut self.pack,
            Category::Unpack => &mut self.unpack,
            Category::Poll => &mut self.poll,
            Category::Idle => &mut self.idle,
        }
    }

    pub fn category_sum(&self) -> f64 {
        Category::ALL.iter().map(|&c| self.get(c)).sum()
    }

    /// Pack + unpack + poll, the communication share.
    pub fn communication(&self) -> f64 {
        self.pack + self.unpack + self.poll
    }

    /// Relative gap between the category sum and wall time.
    pub fn accounting_gap(&self) -> f64 {
        if self.wall <= 0.0 {
            return self.category_sum().abs();
        }
        (self.category_sum() - self.wall).abs() / self.wall
    }
}

/// Nested scope timer. Time is charged to the innermost open scope only, so
/// the categories never double count; with an outer scope open for the whole
/// run the sum equals the wall time.
#[derive(Debug)]
pub struct Timer {
    start: Instant,
    last: Instant,
    stack: Vec<Category>,
    acc: Breakdown,
}

impl Timer {
    pub fn new(rank: u32) -> Self {
        let now = Instant::now();
        Timer {
            start: now,
            last: now,
            stack: Vec::new(),
            acc: Breakdown {
                rank,
                ..Default::default()
            },
        }
    }

    fn charge(&mut self, now: Instant) {
        if let Some(&c) = self.stack.last() {
            *self.acc.slot(c) += (now - self.last).as_secs_f64();
        }
        self.last = now;
    }

    pub fn enter(&mut self, c: Category) {
        let now = Instant::now();
        self.charge(now);
        self.stack.push(c);
    }

    pub fn exit(&mut self, c: Category) -> Result<(), TimerError> {
        if self.stack.last() != Some(&c) {
            return Err(TimerError::Unbalanced {
                open: self.stack.last().copied(),
                exited: c,
            });
        }
        let now = Instant::now();
        self.charge(now);
        self.stack.pop();
        Ok(())
    }

    /// Closes the innermost scope and opens `c` at the same instant.
    pub fn switch(&mut self, c: Category) {
        let now = Instant::now();
        self.charge(now);
        self.stack.pop();
        self.stack.push(c);
    }

    pub fn current(&self) -> Option<Category> {
        self.stack.last().copied()
    }

    /// Runs `f` inside scope `c`.
    pub fn scope<T>(&mut self, c: Category, f: impl FnOnce() -> T) -> T {
        self.enter(c);
        let r = f();
        self.exit(c).expect("scope closed by its own guard");
        r
    }

    pub fn snapshot(&self) -> Breakdown {
        let mut b = self.acc;
        if let Some(&c) = self.stack.last() {
            *b.slot(c) += self.last.elapsed().as_secs_f64();
        }
        b.wall = self.start.elapsed().as_secs_f64();
        b
    }

    pub fn finish(mut self) -> Result<Breakdown, TimerError> {
        if !self.stack.is_empty() {
            return Err(TimerError::StillOpen(self.stack.clone()));
        }
        let now = Instant::now();
        self.acc.wall = (now - self.start).as_secs_f64();
        // The wall clock and the last charge share `self.last` when no scope is open.
        Ok(self.acc)
    }
}

/// Arithmetic mean, min and max of one category over ranks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Summary {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Summary::default();
        }
        Summary {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BreakdownSummary {
    pub preprocess: Summary,
    pub mesh: Summary,
    pub pack: Summary,
    pub unpack: Summary,
    pub poll: Summary,
    pub idle: Summary,
    pub wall: Summary,
    /// Mean idle share of wall time.
    pub idle_fraction: f64,
}

impl BreakdownSummary {
    pub fn of(ranks: &[Breakdown]) -> Self {
        let s = |c: Category| Summary::of(ranks.iter().map(|b| b.get(c)));
        let idle_fraction = if ranks.is_empty() {
            0.0
        } else {
            ranks
                .iter()
                .map(|b| if b.wall > 0.0 { b.idle / b.wall } else { 0.0 })
                .sum::<f64>()
                / ranks.len() as f64
        };
        BreakdownSummary {
            preprocess: s(Category::Preprocess),
            mesh: s(Category::Mesh),
            pack: s(Category::Pack),
            unpack: s(Category::Unpack),
            poll: s(Category::Poll),
            idle: s(Category::Idle),
            wall: Summary::of(ranks.iter().map(|b| b.wall)),
            idle_fraction,
        }
    }
}

pub const BIN_DEG: f64 = 5.0;
pub const NUM_BINS: usize = 36;
pub const SLIVER_LOW_DEG: f64 = 2.0;
pub const SLIVER_HIGH_DEG: f64 = 178.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    /// Dihedral angle counts in 5° bins over all kept tets.
    pub histogram: Vec<u64>,
    pub elements: u64,
    pub sliver_angles: u64,
    /// Share of dihedral angles below 2° or above 178°.
    pub sliver_fraction: f64,
    pub min_dihedral: f64,
    pub max_dihedral: f64,
}

impl Default for QualityReport {
    fn default() -> Self {
        QualityReport {
            histogram: vec![0; NUM_BINS],
            elements: 0,
            sliver_angles: 0,
            sliver_fraction: 0.0,
            min_dihedral: 0.0,
            max_dihedral: 0.0,
        }
    }
}

#[inline]
pub fn bin_of(angle_deg: f64) -> usize {
    ((angle_deg / BIN_DEG).floor().max(0.0) as usize).min(NUM_BINS - 1)
}

impl QualityReport {
    /// Accumulates tets one at a time.
    pub fn add(&mut self, tet: &[geom::Point3; 4]) {
        let Ok(q) = geom::quality(tet) else {
            // A flat tet: all angles are 0° or 180°.
            self.add_angles(&[0.0, 0.0, 0.0, 0.0, 180.0, 180.0]);
            return;
        };
        self.add_angles(&q.dihedrals);
    }

    fn add_angles(&mut self, a: &[f64; 6]) {
        if self.elements == 0 {
            self.min_dihedral = f64::INFINITY;
            self.max_dihedral = f64::NEG_INFINITY;
        }
        self.elements += 1;
        for &d in a {
            self.histogram[bin_of(d)] += 1;
            if !(SLIVER_LOW_DEG..=SLIVER_HIGH_DEG).contains(&d) {
                self.sliver_angles += 1;
            }
            self.min_dihedral = self.min_dihedral.min(d);
            self.max_dihedral = self.max_dihedral.max(d);
        }
        self.sliver_fraction = self.sliver_angles as f64 / (6 * self.elements) as f64;
    }

    pub fn total_angles(&self) -> u64 {
        self.histogram.iter().sum()
    }
}

/// Quality over the kept (non-background barycenter) tets.
pub fn histogram(mesh: &TetMesh, img: &LabeledImage) -> QualityReport {
    let mut r = QualityReport::default();
    for t in mesh.alive_tets() {
        let p = mesh.tet_points(t);
        if img.classify(geom::barycenter(&p)) != BACKGROUND {
            r.add(&p);
        }
    }
    r
}

/// Kept tet count under barycenter classification.
pub fn kept_elements(mesh: &TetMesh, img: &LabeledImage) -> usize {
    mesh.alive_tets()
        .filter(|&t| img.classify(geom::barycenter(&mesh.tet_points(t))) != BACKGROUND)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point3;
    use std::time::Duration;

    #[test]
    fn empty_timer_is_zero() {
        let b = Timer::new(0).finish().unwrap();
        assert_eq!(b.category_sum(), 0.0);
    }

    #[test]
    fn mesh_scope_only_charges_mesh() {
        let mut t = Timer::new(0);
        t.scope(Category::Mesh, || std::thread::sleep(Duration::from_millis(5)));
        let b = t.finish().unwrap();
        assert!(b.mesh > 0.004);
        for c in Category::ALL {
            if c != Category::Mesh {
                assert_eq!(b.get(c), 0.0);
            }
        }
    }

    #[test]
    fn nested_scopes_are_exclusive() {
        let mut t = Timer::new(1);
        t.enter(Category::Idle);
        std::thread::sleep(Duration::from_millis(2));
        t.enter(Category::Poll);
        std::thread::sleep(Duration::from_millis(2));
        t.exit(Category::Poll).unwrap();
        t.switch(Category::Mesh);
        std::thread::sleep(Duration::from_millis(2));
        t.exit(Category::Mesh).unwrap();
        let b = t.finish().unwrap();
        assert!(b.accounting_gap() < 0.01, "{b:?}");
        assert!(b.idle > 0.0 && b.poll > 0.0 && b.mesh > 0.0);
    }

    #[test]
    fn unbalanced_exit_fails() {
        let mut t = Timer::new(0);
        t.enter(Category::Pack);
        assert!(t.exit(Category::Unpack).is_err());
        assert!(t.finish().is_err());
    }

    #[test]
    fn regular_tet_bin() {
        let s = 1.0 / 2f64.sqrt();
        let tet = [
            Point3::new(1.0, 0.0, -s),
            Point3::new(-1.0, 0.0, -s),
            Point3::new(0.0, 1.0, s),
            Point3::new(0.0, -1.0, s),
        ];
        let mut r = QualityReport::default();
        r.add(&tet);
        assert_eq!(r.histogram[14], 6);
        assert_eq!(r.total_angles(), 6);
        assert_eq!(r.sliver_fraction, 0.0);
        assert_eq!(bin_of(180.0), NUM_BINS - 1);
    }

    #[test]
    fn summary_stats() {
        let s = Summary::of([1.0, 2.0, 6.0]);
        assert_eq!((s.mean, s.min, s.max), (3.0, 1.0, 6.0));
    }
}
