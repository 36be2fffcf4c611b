//! Problem instances: node coordinates, a depot, and the two vehicle speeds.
//!
//! On-disk format, shared with external tooling:
//! line 1 `n depot alpha`, then `n` lines `x y`. A generated set is a
//! directory of `inst_0000.txt .. inst_NNNN.txt` plus `manifest.txt`
//! recording seed, family and scale.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::rng::Rng;

#[derive(Debug)]
pub enum InstanceError {
    /// Caller passed an out-of-contract argument.
    Argument(String),
    /// Malformed file content; line numbers are 1-based.
    Parse { line: usize, msg: String },
    /// Structurally valid input that breaks an instance invariant.
    Validation(String),
    Io(String),
}

impl fmt::Display for InstanceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InstanceError::Argument(m) => write!(f, "invalid argument: {m}"),
            InstanceError::Parse { line, msg } => write!(f, "parse error at line {line}: {msg}"),
            InstanceError::Validation(m) => write!(f, "invalid instance: {m}"),
            InstanceError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for InstanceError {}

impl From<std::io::Error> for InstanceError {
    fn from(e: std::io::Error) -> Self {
        InstanceError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Agent {
    Truck,
    Drone,
}

impl fmt::Display for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Agent::Truck => write!(f, "truck"),
            Agent::Drone => write!(f, "drone"),
        }
    }
}

/// Instance generation families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Uniform coordinates, depot forced to (0, 0) at index 0.
    CornerDepot,
    /// Uniform coordinates, depot index drawn uniformly.
    RandomDepot,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::CornerDepot => "corner-depot",
            Family::RandomDepot => "random-depot",
        }
    }

    pub fn parse(s: &str) -> Result<Family, InstanceError> {
        match s {
            "corner-depot" => Ok(Family::CornerDepot),
            "random-depot" => Ok(Family::RandomDepot),
            other => Err(InstanceError::Argument(format!(
                "unknown family '{other}' (expected corner-depot or random-depot)"
            ))),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub nodes: Vec<Point>,
    pub depot: usize,
    /// Drone-to-truck speed ratio; the drone moves at `alpha * truck_speed`.
    pub alpha: f64,
    pub truck_speed: f64,
}

impl Instance {
    pub fn new(nodes: Vec<Point>, depot: usize, alpha: f64) -> Result<Instance, InstanceError> {
        let inst = Instance { nodes, depot, alpha, truck_speed: 1.0 };
        inst.validate()?;
        Ok(inst)
    }

    fn validate(&self) -> Result<(), InstanceError> {
        if self.nodes.is_empty() {
            return Err(InstanceError::Validation("instance has no nodes".into()));
        }
        if self.depot >= self.nodes.len() {
            return Err(InstanceError::Validation(format!(
                "depot index {} out of range for {} nodes",
                self.depot,
                self.nodes.len()
            )));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(InstanceError::Validation(format!(
                "alpha must be finite and positive, got {}",
                self.alpha
            )));
        }
        if !(self.truck_speed > 0.0) || !self.truck_speed.is_finite() {
            return Err(InstanceError::Validation("truck speed must be positive".into()));
        }
        for (i, p) in self.nodes.iter().enumerate() {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(InstanceError::Validation(format!(
                    "node {i} has non-finite coordinates"
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    /// Customer node indices (everything except the depot).
    pub fn customers(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(move |&i| i != self.depot)
    }

    pub fn distance_between(&self, i: usize, j: usize) -> f64 {
        distance(self.nodes[i], self.nodes[j])
    }

    /// Largest pairwise node distance. Zero for a single node.
    pub fn diameter(&self) -> f64 {
        let mut d = 0.0f64;
        for i in 0..self.nodes.len() {
            for j in (i + 1)..self.nodes.len() {
                d = d.max(self.distance_between(i, j));
            }
        }
        d
    }

    pub fn speed(&self, agent: Agent) -> f64 {
        match agent {
            Agent::Truck => self.truck_speed,
            Agent::Drone => self.alpha * self.truck_speed,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), InstanceError> {
        let mut out = String::new();
        out.push_str(&format!("{} {} {}\n", self.n(), self.depot, self.alpha));
        for p in &self.nodes {
            out.push_str(&format!("{} {}\n", p.x, p.y));
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Instance, InstanceError> {
        let text = fs::read_to_string(path)?;
        Instance::parse_text(&text)
    }

    pub fn parse_text(text: &str) -> Result<Instance, InstanceError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or(InstanceError::Parse { line: 1, msg: "empty file".into() })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(InstanceError::Parse {
                line: 1,
                msg: format!("expected 'n depot alpha', got {} fields", fields.len()),
            });
        }
        let n: usize = fields[0]
            .parse()
            .map_err(|_| InstanceError::Parse { line: 1, msg: format!("bad node count '{}'", fields[0]) })?;
        let depot: usize = fields[1]
            .parse()
            .map_err(|_| InstanceError::Parse { line: 1, msg: format!("bad depot index '{}'", fields[1]) })?;
        let alpha: f64 = fields[2]
            .parse()
            .map_err(|_| InstanceError::Parse { line: 1, msg: format!("bad alpha '{}'", fields[2]) })?;
        let mut nodes = Vec::with_capacity(n);
        for _ in 0..n {
            let (idx, line) = lines.next().ok_or_else(|| InstanceError::Parse {
                line: n + 1,
                msg: format!("expected {n} coordinate lines"),
            })?;
            let lineno = idx + 1;
            let c: Vec<&str> = line.split_whitespace().collect();
            if c.len() != 2 {
                return Err(InstanceError::Parse {
                    line: lineno,
                    msg: format!("expected 'x y', got {} fields", c.len()),
                });
            }
            let x: f64 = c[0].parse().map_err(|_| InstanceError::Parse {
                line: lineno,
                msg: format!("bad coordinate '{}'", c[0]),
            })?;
            let y: f64 = c[1].parse().map_err(|_| InstanceError::Parse {
                line: lineno,
                msg: format!("bad coordinate '{}'", c[1]),
            })?;
            nodes.push(Point { x, y });
        }
        Instance::new(nodes, depot, alpha)
    }
}

/// Euclidean distance between two points.
pub fn distance(a: Point, b: Point) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Time for `agent` to cover distance `d`.
pub fn travel_time(agent: Agent, d: f64, inst: &Instance) -> Result<f64, InstanceError> {
    if !(d >= 0.0) {
        return Err(InstanceError::Argument(format!("negative distance {d}")));
    }
    Ok(d / inst.speed(agent))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSet {
    pub instances: Vec<Instance>,
    pub seed: u64,
    pub family: Family,
    pub scale: f64,
}

/// Generates `count` instances of `n` nodes each. Coordinates are i.i.d.
/// uniform on [0, scale)^2 drawn from one SplitMix64 stream in document
/// order (x then y per node, then the depot draw for random-depot), so a
/// (seed, family, scale, n, count) tuple always yields the same set.
pub fn generate_instances(
    n: usize,
    count: usize,
    seed: u64,
    family: Family,
    scale: f64,
    alpha: f64,
) -> Result<InstanceSet, InstanceError> {
    if n < 2 {
        return Err(InstanceError::Argument(format!("need n >= 2 nodes, got {n}")));
    }
    if count == 0 {
        return Err(InstanceError::Argument("need at least one instance".into()));
    }
    if scale != 1.0 && scale != 100.0 {
        return Err(InstanceError::Argument(format!("scale must be 1 or 100, got {scale}")));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(InstanceError::Argument(format!("alpha must be positive, got {alpha}")));
    }
    let mut rng = Rng::new(seed);
    let mut instances = Vec::with_capacity(count);
    for _ in 0..count {
        let mut nodes = Vec::with_capacity(n);
        for _ in 0..n {
            let x = rng.range_f64(0.0, scale);
            let y = rng.range_f64(0.0, scale);
            nodes.push(Point { x, y });
        }
        let depot = match family {
            Family::CornerDepot => {
                nodes[0] = Point { x: 0.0, y: 0.0 };
                0
            }
            Family::RandomDepot => rng.below(n),
        };
        instances.push(Instance::new(nodes, depot, alpha)?);
    }
    Ok(InstanceSet { instances, seed, family, scale })
}

pub fn save_instances(set: &InstanceSet, dir: &Path) -> Result<(), InstanceError> {
    fs::create_dir_all(dir)?;
    for (i, inst) in set.instances.iter().enumerate() {
        inst.save(&dir.join(format!("inst_{i:04}.txt")))?;
    }
    let mut manifest = fs::File::create(dir.join("manifest.txt"))?;
    writeln!(manifest, "seed {}", set.seed)?;
    writeln!(manifest, "family {}", set.family)?;
    writeln!(manifest, "scale {}", set.scale)?;
    writeln!(manifest, "count {}", set.instances.len())?;
    Ok(())
}

pub fn load_instances(dir: &Path) -> Result<InstanceSet, InstanceError> {
    let manifest = fs::read_to_string(dir.join("manifest.txt"))
        .map_err(|e| InstanceError::Io(format!("manifest.txt: {e}")))?;
    let mut seed = None;
    let mut family = None;
    let mut scale = None;
    let mut count = None;
    for (idx, line) in manifest.lines().enumerate() {
        let lineno = idx + 1;
        let mut it = line.split_whitespace();
        let key = it.next().unwrap_or("");
        let val = it.next().unwrap_or("");
        match key {
            "seed" => {
                seed = Some(val.parse().map_err(|_| InstanceError::Parse {
                    line: lineno,
                    msg: format!("bad seed '{val}'"),
                })?)
            }
            "family" => family = Some(Family::parse(val)?),
            "scale" => {
                scale = Some(val.parse().map_err(|_| InstanceError::Parse {
                    line: lineno,
                    msg: format!("bad scale '{val}'"),
                })?)
            }
            "count" => {
                count = Some(val.parse().map_err(|_| InstanceError::Parse {
                    line: lineno,
                    msg: format!("bad count '{val}'"),
                })?)
            }
            "" => {}
            other => {
                return Err(InstanceError::Parse {
                    line: lineno,
                    msg: format!("unknown manifest key '{other}'"),
                })
            }
        }
    }
    let seed = seed.ok_or(InstanceError::Validation("manifest missing seed".into()))?;
    let family = family.ok_or(InstanceError::Validation("manifest missing family".into()))?;
    let scale = scale.ok_or(InstanceError::Validation("manifest missing scale".into()))?;
    let count: usize = count.ok_or(InstanceError::Validation("manifest missing count".into()))?;

    let mut instances = Vec::with_capacity(count);
    for i in 0..count {
        let path = dir.join(format!("inst_{i:04}.txt"));
        instances.push(Instance::load(&path).map_err(|e| match e {
            InstanceError::Io(m) => InstanceError::Io(format!("{}: {m}", path.display())),
            other => other,
        })?);
    }
    if let Some(first) = instances.first() {
        for (i, inst) in instances.iter().enumerate() {
            if inst.n() != first.n() || inst.alpha != first.alpha {
                return Err(InstanceError::Validation(format!(
                    "instance {i} does not share n/alpha with the rest of the set"
                )));
            }
        }
    }
    Ok(InstanceSet { instances, seed, family, scale })
}
