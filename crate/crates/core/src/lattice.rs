//! Continuum domains, their lattice discretizations, and the wired graph
//! `D_N ∪ {ρ}` in which every edge leaving `D_N` is rerouted to one boundary vertex.

use crate::error::{Error, Result};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Zero};
use std::collections::{HashMap, VecDeque};

/// Marker used in adjacency lists for the boundary vertex ρ.
pub const RHO: u32 = u32::MAX;

/// Neighbor order used throughout: east, north, west, south.
pub const DIRECTIONS: [(i32, i32); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

/// Degree of every lattice site in the wired graph.
pub const SITE_DEGREE: u32 = 4;

/// A point of ℤ². Ordering is lexicographic in `(x, y)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Site {
    pub x: i32,
    pub y: i32,
}

impl Site {
    pub const fn new(x: i32, y: i32) -> Self {
        Site { x, y }
    }

    pub fn step(self, direction: usize) -> Site {
        let (dx, dy) = DIRECTIONS[direction];
        Site::new(self.x + dx, self.y + dy)
    }
}

impl From<(i32, i32)> for Site {
    fn from((x, y): (i32, i32)) -> Self {
        Site::new(x, y)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ContinuumDomain {
    Disc { center: [f64; 2], radius: f64 },
    Rectangle { lower: [f64; 2], upper: [f64; 2] },
    /// Simple polygon, vertices in order (either orientation).
    Polygon { vertices: Vec<[f64; 2]> },
}

fn rat(v: f64) -> BigRational {
    BigRational::from_f64(v).expect("finite coordinate")
}

fn rat_int(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

impl ContinuumDomain {
    pub fn unit_disc() -> Self {
        ContinuumDomain::Disc {
            center: [0.0, 0.0],
            radius: 1.0,
        }
    }

    pub fn unit_square() -> Self {
        ContinuumDomain::Rectangle {
            lower: [0.0, 0.0],
            upper: [1.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |p: &[f64; 2]| p.iter().all(|c| c.is_finite());
        match self {
            ContinuumDomain::Disc { center, radius } => {
                if !finite(center) || !radius.is_finite() || *radius <= 0.0 {
                    return Err(Error::InvalidDomain(format!("disc radius {radius} must be positive")));
                }
            }
            ContinuumDomain::Rectangle { lower, upper } => {
                if !finite(lower) || !finite(upper) || upper[0] <= lower[0] || upper[1] <= lower[1] {
                    return Err(Error::InvalidDomain("rectangle sides must be positive".into()));
                }
            }
            ContinuumDomain::Polygon { vertices } => {
                if vertices.len() < 3 || !vertices.iter().all(finite) {
                    return Err(Error::InvalidDomain("polygon needs at least 3 finite vertices".into()));
                }
                if signed_area(vertices).abs() <= 0.0 {
                    return Err(Error::InvalidDomain("polygon has zero area".into()));
                }
                if !is_simple(vertices) {
                    return Err(Error::InvalidDomain("polygon is not simple".into()));
                }
            }
        }
        Ok(())
    }

    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        match self {
            ContinuumDomain::Disc { center, radius } => (
                [center[0] - radius, center[1] - radius],
                [center[0] + radius, center[1] + radius],
            ),
            ContinuumDomain::Rectangle { lower, upper } => (*lower, *upper),
            ContinuumDomain::Polygon { vertices } => {
                let mut lo = [f64::INFINITY; 2];
                let mut hi = [f64::NEG_INFINITY; 2];
                for v in vertices {
                    for k in 0..2 {
                        lo[k] = lo[k].min(v[k]);
                        hi[k] = hi[k].max(v[k]);
                    }
                }
                (lo, hi)
            }
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            ContinuumDomain::Disc { center, radius } => {
                (p[0] - center[0]).hypot(p[1] - center[1]) < *radius
            }
            ContinuumDomain::Rectangle { lower, upper } => {
                p[0] > lower[0] && p[0] < upper[0] && p[1] > lower[1] && p[1] < upper[1]
            }
            ContinuumDomain::Polygon { vertices } => {
                point_in_polygon_f64(vertices, p) && self.boundary_distance(p) > 0.0
            }
        }
    }

    /// Euclidean distance from an interior point to ∂D (0 outside).
    pub fn boundary_distance(&self, p: [f64; 2]) -> f64 {
        match self {
            ContinuumDomain::Disc { center, radius } => {
                (radius - (p[0] - center[0]).hypot(p[1] - center[1])).max(0.0)
            }
            ContinuumDomain::Rectangle { lower, upper } => (p[0] - lower[0])
                .min(upper[0] - p[0])
                .min(p[1] - lower[1])
                .min(upper[1] - p[1])
                .max(0.0),
            ContinuumDomain::Polygon { vertices } => {
                if !point_in_polygon_f64(vertices, p) {
                    return 0.0;
                }
                polygon_edges(vertices)
                    .map(|(a, b)| segment_distance(p, a, b))
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }

    /// Area of the domain.
    pub fn area(&self) -> f64 {
        match self {
            ContinuumDomain::Disc { radius, .. } => std::f64::consts::PI * radius * radius,
            ContinuumDomain::Rectangle { lower, upper } => (upper[0] - lower[0]) * (upper[1] - lower[1]),
            ContinuumDomain::Polygon { vertices } => signed_area(vertices).abs(),
        }
    }

    /// Exact test of `d_∞(site/N, ℝ² ∖ D) ≥ 1/N`, i.e. the open ℓ∞-ball of radius
    /// `1/N` around `site/N` lies inside `D`.
    pub fn admits(&self, site: Site, scale: u32) -> bool {
        let n = f64::from(scale);
        let (x, y) = (f64::from(site.x), f64::from(site.y));
        match self {
            ContinuumDomain::Disc { center, radius } => {
                let (cx, cy) = (n * center[0], n * center[1]);
                let r2 = (n * radius).powi(2);
                let worst = [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)]
                    .iter()
                    .map(|(dx, dy)| (x + dx - cx).powi(2) + (y + dy - cy).powi(2))
                    .fold(0.0, f64::max);
                let slack = 1e-9 * (r2 + 1.0);
                if worst < r2 - slack {
                    return true;
                }
                if worst > r2 + slack {
                    return false;
                }
                let nr = rat_int(i64::from(scale));
                let (cx, cy, r) = (rat(center[0]) * &nr, rat(center[1]) * &nr, rat(*radius) * &nr);
                let r2 = &r * &r;
                [(-1, -1), (-1, 1), (1, -1), (1, 1)].iter().all(|&(dx, dy)| {
                    let ex = rat_int(i64::from(site.x + dx)) - &cx;
                    let ey = rat_int(i64::from(site.y + dy)) - &cy;
                    &ex * &ex + &ey * &ey <= r2
                })
            }
            ContinuumDomain::Rectangle { lower, upper } => {
                let fast = [x - 1.0 - n * lower[0], n * upper[0] - x - 1.0, y - 1.0 - n * lower[1], n * upper[1] - y - 1.0];
                if fast.iter().all(|&m| m > 1e-9 * n) {
                    return true;
                }
                if fast.iter().any(|&m| m < -1e-9 * n) {
                    return false;
                }
                let nr = rat_int(i64::from(scale));
                let (sx, sy) = (rat_int(i64::from(site.x)), rat_int(i64::from(site.y)));
                let one = rat_int(1);
                &sx - &one >= rat(lower[0]) * &nr
                    && &sx + &one <= rat(upper[0]) * &nr
                    && &sy - &one >= rat(lower[1]) * &nr
                    && &sy + &one <= rat(upper[1]) * &nr
            }
            ContinuumDomain::Polygon { vertices } => {
                let nr = rat_int(i64::from(scale));
                let scaled: Vec<[BigRational; 2]> = vertices
                    .iter()
                    .map(|v| [rat(v[0]) * &nr, rat(v[1]) * &nr])
                    .collect();
                polygon_admits_exact(&scaled, site)
            }
        }
    }
}

fn signed_area(vertices: &[[f64; 2]]) -> f64 {
    polygon_edges(vertices)
        .map(|(a, b)| a[0] * b[1] - b[0] * a[1])
        .sum::<f64>()
        * 0.5
}

fn polygon_edges(vertices: &[[f64; 2]]) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
    (0..vertices.len()).map(move |i| (vertices[i], vertices[(i + 1) % vertices.len()]))
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn segments_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    let on = |p: [f64; 2], q: [f64; 2], r: [f64; 2], o: f64| {
        o == 0.0
            && r[0] >= p[0].min(q[0])
            && r[0] <= p[0].max(q[0])
            && r[1] >= p[1].min(q[1])
            && r[1] <= p[1].max(q[1])
    };
    on(a, b, c, o1) || on(a, b, d, o2) || on(c, d, a, o3) || on(c, d, b, o4)
}

fn is_simple(vertices: &[[f64; 2]]) -> bool {
    let m = vertices.len();
    for i in 0..m {
        for j in (i + 1)..m {
            let adjacent = j == i + 1 || (i == 0 && j == m - 1);
            if adjacent {
                continue;
            }
            let (a, b) = (vertices[i], vertices[(i + 1) % m]);
            let (c, d) = (vertices[j], vertices[(j + 1) % m]);
            if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

fn point_in_polygon_f64(vertices: &[[f64; 2]], p: [f64; 2]) -> bool {
    let mut inside = false;
    for (a, b) in polygon_edges(vertices) {
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let xi = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < xi {
                inside = !inside;
            }
        }
    }
    inside
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let s = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - a[0] - s * dx).hypot(p[1] - a[1] - s * dy)
}

/// Exact version for polygons with vertices already scaled by N: the open unit
/// ℓ∞-ball around `site` must avoid every edge and its center must be inside.
fn polygon_admits_exact(scaled: &[[BigRational; 2]], site: Site) -> bool {
    let m = scaled.len();
    let px = rat_int(i64::from(site.x));
    let py = rat_int(i64::from(site.y));
    let one = rat_int(1);
    let lo = [&px - &one, &py - &one];
    let hi = [&px + &one, &py + &one];
    for i in 0..m {
        let (a, b) = (&scaled[i], &scaled[(i + 1) % m]);
        if segment_meets_open_box(a, b, &lo, &hi) {
            return false;
        }
    }
    let mut inside = false;
    for i in 0..m {
        let (a, b) = (&scaled[i], &scaled[(i + 1) % m]);
        if (a[1] > py) != (b[1] > py) {
            let xi = &a[0] + (&py - &a[1]) * (&b[0] - &a[0]) / (&b[1] - &a[1]);
            if px < xi {
                inside = !inside;
            }
        }
    }
    inside
}

/// Does the closed segment `[a, b]` meet the open box `(lo, hi)`?
fn segment_meets_open_box(a: &[BigRational; 2], b: &[BigRational; 2], lo: &[BigRational; 2], hi: &[BigRational; 2]) -> bool {
    // Parameter interval [s_lo, s_hi] with flags for whether each end is attained.
    let mut s_lo = rat_int(0);
    let mut lo_closed = true;
    let mut s_hi = rat_int(1);
    let mut hi_closed = true;
    for k in 0..2 {
        let d = &b[k] - &a[k];
        if d.is_zero() {
            if a[k] <= lo[k] || a[k] >= hi[k] {
                return false;
            }
            continue;
        }
        let t1 = (&lo[k] - &a[k]) / &d;
        let t2 = (&hi[k] - &a[k]) / &d;
        let (enter, exit) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        // open constraint: s in (enter, exit)
        if enter > s_lo || (enter == s_lo && lo_closed) {
            s_lo = enter;
            lo_closed = false;
        }
        if exit < s_hi || (exit == s_hi && hi_closed) {
            s_hi = exit;
            hi_closed = false;
        }
    }
    s_lo < s_hi || (s_lo == s_hi && lo_closed && hi_closed)
}

/// One exit edge of the wired graph: the edge from `site` in `direction` leads to ρ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BoundarySlot {
    pub site: u32,
    pub direction: u8,
}

/// Summary returned by [`WiredDomain::validate`].
#[derive(Clone, Debug, PartialEq)]
pub struct DomainReport {
    pub n: usize,
    pub pi_rho: u64,
    pub bbox: (Site, Site),
}

#[derive(Clone, Debug)]
pub struct WiredDomain {
    scale: u32,
    sites: Vec<Site>,
    index: HashMap<Site, u32>,
    neighbors: Vec<[u32; 4]>,
    boundary_edges: Vec<u8>,
    pi_rho: u64,
    slots: Vec<BoundarySlot>,
}

/// Maximal admissible discretization of `domain` at scale `scale`, restricted to
/// its largest connected component (ties broken by the smallest site).
pub fn discretize(domain: &ContinuumDomain, scale: u32) -> Result<WiredDomain> {
    domain.validate()?;
    if scale == 0 {
        return Err(Error::BadParameterRange("scale N must be positive".into()));
    }
    let n = f64::from(scale);
    let (lo, hi) = domain.bounding_box();
    let (x0, x1) = ((lo[0] * n).floor() as i32 - 1, (hi[0] * n).ceil() as i32 + 1);
    let (y0, y1) = ((lo[1] * n).floor() as i32 - 1, (hi[1] * n).ceil() as i32 + 1);
    let mut admitted = Vec::new();
    for x in x0..=x1 {
        for y in y0..=y1 {
            let s = Site::new(x, y);
            if domain.admits(s, scale) {
                admitted.push(s);
            }
        }
    }
    if admitted.is_empty() {
        return Err(Error::EmptyDomain { scale });
    }
    let full = WiredDomain::from_sites(scale, admitted)?;
    let component = full.largest_component();
    if component.len() == full.len() {
        Ok(full)
    } else {
        WiredDomain::from_sites(scale, component)
    }
}

impl WiredDomain {
    /// Builds the wired graph on an arbitrary finite site set (sorted, deduplicated).
    /// No connectivity restriction is applied; see [`WiredDomain::validate`].
    pub fn from_sites(scale: u32, sites: impl IntoIterator<Item = Site>) -> Result<Self> {
        let mut sites: Vec<Site> = sites.into_iter().collect();
        sites.sort_unstable();
        sites.dedup();
        if sites.is_empty() {
            return Err(Error::EmptyDomain { scale });
        }
        let index: HashMap<Site, u32> = sites.iter().enumerate().map(|(i, &s)| (s, i as u32)).collect();
        let mut neighbors = Vec::with_capacity(sites.len());
        let mut boundary_edges = Vec::with_capacity(sites.len());
        let mut slots = Vec::new();
        for (i, &s) in sites.iter().enumerate() {
            let mut nb = [RHO; 4];
            let mut b = 0u8;
            for (d, slot) in nb.iter_mut().enumerate() {
                match index.get(&s.step(d)) {
                    Some(&j) => *slot = j,
                    None => {
                        b += 1;
                        slots.push(BoundarySlot {
                            site: i as u32,
                            direction: d as u8,
                        });
                    }
                }
            }
            neighbors.push(nb);
            boundary_edges.push(b);
        }
        Ok(WiredDomain {
            scale,
            pi_rho: slots.len() as u64,
            sites,
            index,
            neighbors,
            boundary_edges,
            slots,
        })
    }

    /// The `k × k` box `{1..k}²`, i.e. the unit square discretized at `N = k + 1`.
    pub fn square(k: u32) -> Self {
        let k = k.max(1) as i32;
        let sites = (1..=k).flat_map(|x| (1..=k).map(move |y| Site::new(x, y)));
        WiredDomain::from_sites(k as u32 + 1, sites).expect("nonempty box")
    }

    pub fn scale(&self) -> u32 {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn site(&self, i: usize) -> Site {
        self.sites[i]
    }

    pub fn index_of(&self, site: Site) -> Option<usize> {
        self.index.get(&site).map(|&i| i as usize)
    }

    pub fn require_index(&self, site: Site) -> Result<usize> {
        self.index_of(site).ok_or(Error::UnknownSite(site.x, site.y))
    }

    /// Neighbors in [`DIRECTIONS`] order; [`RHO`] marks a rerouted edge.
    pub fn neighbors(&self, i: usize) -> &[u32; 4] {
        &self.neighbors[i]
    }

    pub fn boundary_edge_count(&self, i: usize) -> u32 {
        u32::from(self.boundary_edges[i])
    }

    pub fn pi(&self, _i: usize) -> u32 {
        SITE_DEGREE
    }

    pub fn pi_rho(&self) -> u64 {
        self.pi_rho
    }

    /// Exit edges in canonical order (site order, then direction).
    pub fn boundary_slots(&self) -> &[BoundarySlot] {
        &self.slots
    }

    /// The lattice point outside the domain that `slot` leads to.
    pub fn exit_point(&self, slot: BoundarySlot) -> Site {
        self.sites[slot.site as usize].step(slot.direction as usize)
    }

    /// Continuum position `x / N`.
    pub fn position(&self, i: usize) -> [f64; 2] {
        let n = f64::from(self.scale);
        let s = self.sites[i];
        [f64::from(s.x) / n, f64::from(s.y) / n]
    }

    /// The site `⌊xN⌋`, if it belongs to the domain.
    pub fn site_at(&self, p: [f64; 2]) -> Option<usize> {
        let n = f64::from(self.scale);
        self.index_of(Site::new((p[0] * n).floor() as i32, (p[1] * n).floor() as i32))
    }

    /// Copy of the domain with one site removed and boundary data recomputed.
    pub fn without_site(&self, site: Site) -> Result<Self> {
        self.require_index(site)?;
        WiredDomain::from_sites(self.scale, self.sites.iter().copied().filter(|&s| s != site))
    }

    pub fn is_subdomain_of(&self, other: &WiredDomain) -> bool {
        self.sites.iter().all(|s| other.index.contains_key(s))
    }

    fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.len()];
        let mut out = Vec::new();
        for start in 0..self.len() {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(i) = queue.pop_front() {
                for &j in &self.neighbors[i] {
                    if j != RHO && !seen[j as usize] {
                        seen[j as usize] = true;
                        comp.push(j as usize);
                        queue.push_back(j as usize);
                    }
                }
            }
            out.push(comp);
        }
        out
    }

    fn largest_component(&self) -> Vec<Site> {
        // components are discovered in site order, so max_by_key's last-wins rule
        // is avoided by a strict comparison
        let comps = self.components();
        let mut best = 0;
        for (k, c) in comps.iter().enumerate() {
            if c.len() > comps[best].len() {
                best = k;
            }
        }
        comps[best].iter().map(|&i| self.sites[i]).collect()
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() == 1
    }

    /// Re-derives every structural invariant from scratch.
    pub fn validate(&self) -> Result<DomainReport> {
        let fail = |msg: String| Err(Error::InvariantViolation(msg));
        if self.sites.is_empty() {
            return fail("empty site list".into());
        }
        if !self.sites.windows(2).all(|w| w[0] < w[1]) {
            return fail("ordering: sites not strictly lexicographic".into());
        }
        let mut total = 0u64;
        for (i, &s) in self.sites.iter().enumerate() {
            if self.index.get(&s) != Some(&(i as u32)) {
                return fail(format!("site_index: {s:?} does not map to {i}"));
            }
            let mut inside = 0u32;
            for d in 0..4 {
                let expected = self.index.get(&s.step(d)).copied().unwrap_or(RHO);
                if self.neighbors[i][d] != expected {
                    return fail(format!("adjacency: site {s:?} direction {d}"));
                }
                if expected != RHO {
                    inside += 1;
                }
            }
            if inside + self.boundary_edge_count(i) != SITE_DEGREE {
                return fail(format!("degree: site {s:?} has {inside} + {} edges", self.boundary_edges[i]));
            }
            total += u64::from(self.boundary_edges[i]);
        }
        if total != self.pi_rho || self.slots.len() as u64 != total {
            return fail(format!("pi(rho) = {} but boundary edges sum to {total}", self.pi_rho));
        }
        if self.pi_rho < 4 {
            return fail(format!("pi(rho) = {} < 4", self.pi_rho));
        }
        if !self.is_connected() {
            return fail("connectivity: site graph has more than one component".into());
        }
        let lo = Site::new(
            self.sites.iter().map(|s| s.x).min().unwrap(),
            self.sites.iter().map(|s| s.y).min().unwrap(),
        );
        let hi = Site::new(
            self.sites.iter().map(|s| s.x).max().unwrap(),
            self.sites.iter().map(|s| s.y).max().unwrap(),
        );
        Ok(DomainReport {
            n: self.len(),
            pi_rho: self.pi_rho,
            bbox: (lo, hi),
        })
    }
}
