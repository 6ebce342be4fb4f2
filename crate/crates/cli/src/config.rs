//! Flat `key=value` configuration with `--key value` command-line overrides.

use gfflab_core::lattice::ContinuumDomain;
use gfflab_core::walk::HoldingMode;
use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Command {
    GreenCheck,
    SampleDgff,
    ThickPoints,
    RunWalk,
    AvoidedPoints,
    LightPoints,
    VerifyIsomorphism,
    CoverTime,
    ReportConstants,
}

impl Command {
    pub const ALL: [Command; 9] = [
        Command::GreenCheck,
        Command::SampleDgff,
        Command::ThickPoints,
        Command::RunWalk,
        Command::AvoidedPoints,
        Command::LightPoints,
        Command::VerifyIsomorphism,
        Command::CoverTime,
        Command::ReportConstants,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::GreenCheck => "green-check",
            Command::SampleDgff => "sample-dgff",
            Command::ThickPoints => "thick-points",
            Command::RunWalk => "run-walk",
            Command::AvoidedPoints => "avoided-points",
            Command::LightPoints => "light-points",
            Command::VerifyIsomorphism => "verify-isomorphism",
            Command::CoverTime => "cover-time",
            Command::ReportConstants => "report-constants",
        }
    }

    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| ConfigError(format!("command: unknown command `{s}`")))
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Keys accepted in config files and as `--key` overrides.
pub const KEYS: &[&str] = &[
    "command", "domain", "width", "height", "vertices", "N", "lambda", "theta", "t", "a", "b", "bins",
    "replicas", "seed", "holding", "output_dir", "threads",
];

/// A fully validated run description.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub domain: ContinuumDomain,
    pub n: u32,
    pub lambda: Option<f64>,
    pub theta: Option<f64>,
    pub t: Option<f64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub bins: usize,
    pub replicas: usize,
    pub master_seed: u64,
    pub holding: HoldingMode,
    pub output_dir: PathBuf,
    pub threads: usize,
    /// The raw key/value pairs after overrides, echoed into the manifest.
    pub raw: BTreeMap<String, String>,
}

fn canonical_key(k: &str) -> Result<String, ConfigError> {
    let k = k.trim().replace('-', "_");
    let k = if k == "n" { "N".to_string() } else { k };
    let k = if k == "master_seed" { "seed".to_string() } else { k };
    if KEYS.contains(&k.as_str()) {
        Ok(k)
    } else {
        err(format!("{k}: unknown key"))
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_text(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return err(format!("line {}: expected key=value", no + 1));
        };
        map.insert(canonical_key(k)?, v.trim().to_string());
    }
    Ok(map)
}

/// `[command] [--config FILE] [--key value]...`; later settings win.
pub fn parse_args<I, S>(args: I) -> Result<RunConfig, ConfigError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let args: Vec<String> = args.into_iter().map(|s| s.as_ref().to_string()).collect();
    let mut map = BTreeMap::new();
    let mut overrides = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let a = &args[i];
        if let Some(key) = a.strip_prefix("--") {
            let (key, value) = match key.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    i += 1;
                    let Some(v) = args.get(i) else {
                        return err(format!("{key}: missing value"));
                    };
                    (key.to_string(), v.clone())
                }
            };
            if key == "config" {
                let text = std::fs::read_to_string(&value)
                    .map_err(|e| ConfigError(format!("config: cannot read {value}: {e}")))?;
                map.extend(parse_text(&text)?);
            } else {
                overrides.push((canonical_key(&key)?, value));
            }
        } else if i == 0 {
            overrides.push(("command".to_string(), a.clone()));
        } else {
            return err(format!("unexpected argument `{a}`"));
        }
        i += 1;
    }
    map.extend(overrides);
    from_map(map)
}

fn get<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>, ConfigError> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| ConfigError(format!("{key}: cannot parse `{v}`"))),
    }
}

fn positive(key: &str, v: Option<f64>) -> Result<Option<f64>, ConfigError> {
    match v {
        Some(x) if !(x > 0.0) || !x.is_finite() => err(format!("{key}: must be positive, got {x}")),
        v => Ok(v),
    }
}

fn parse_vertices(s: &str) -> Result<Vec<[f64; 2]>, ConfigError> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let xy: Vec<&str> = p.split_whitespace().collect();
            match xy.as_slice() {
                [x, y] => match (x.parse(), y.parse()) {
                    (Ok(x), Ok(y)) => Ok([x, y]),
                    _ => err(format!("vertices: cannot parse `{p}`")),
                },
                _ => err(format!("vertices: expected `x y` pairs separated by `;`, got `{p}`")),
            }
        })
        .collect()
}

pub fn from_map(map: BTreeMap<String, String>) -> Result<RunConfig, ConfigError> {
    let command = Command::parse(map.get("command").ok_or_else(|| ConfigError("command: missing".into()))?)?;
    let n: u32 = get(&map, "N")?.ok_or_else(|| ConfigError("N: missing".into()))?;
    if n == 0 {
        return err("N: must be positive");
    }
    let domain = match map.get("domain").map(String::as_str).unwrap_or("square") {
        "square" => ContinuumDomain::unit_square(),
        "disc" => ContinuumDomain::unit_disc(),
        "rectangle" => {
            let w = positive("width", get(&map, "width")?)?.unwrap_or(1.0);
            let h = positive("height", get(&map, "height")?)?.unwrap_or(1.0);
            ContinuumDomain::Rectangle { lower: [0.0, 0.0], upper: [w, h] }
        }
        "polygon" => {
            let v = map.get("vertices").ok_or_else(|| ConfigError("vertices: missing for polygon domain".into()))?;
            let d = ContinuumDomain::Polygon { vertices: parse_vertices(v)? };
            d.validate().map_err(|e| ConfigError(format!("vertices: {e}")))?;
            d
        }
        other => return err(format!("domain: unknown shape `{other}`")),
    };
    let lambda: Option<f64> = get(&map, "lambda")?;
    if let Some(l) = lambda {
        if !(l > 0.0 && l < 1.0) {
            return err(format!("lambda: must lie in (0, 1), got {l}"));
        }
    }
    let theta = positive("theta", get(&map, "theta")?)?;
    let t: Option<f64> = get(&map, "t")?;
    if let Some(t) = t {
        if !(t >= 0.0) || !t.is_finite() {
            return err(format!("t: must be finite and non-negative, got {t}"));
        }
    }
    let a: Option<f64> = get(&map, "a")?;
    let b: Option<f64> = get(&map, "b")?;
    let holding = match map.get("holding").map(String::as_str).unwrap_or("exponential") {
        "exponential" => HoldingMode::Exponential,
        "visit-count" | "visit_count" => HoldingMode::VisitCount,
        other => return err(format!("holding: unknown mode `{other}`")),
    };
    let replicas: usize = get(&map, "replicas")?.unwrap_or(match command {
        Command::VerifyIsomorphism => 10_000,
        Command::CoverTime | Command::AvoidedPoints | Command::ThickPoints | Command::LightPoints => 100,
        _ => 1,
    });
    if replicas == 0 {
        return err("replicas: must be positive");
    }
    let bins: usize = get(&map, "bins")?.unwrap_or(20);
    if bins == 0 {
        return err("bins: must be positive");
    }
    let cfg = RunConfig {
        command,
        domain,
        n,
        lambda,
        theta,
        t,
        a,
        b,
        bins,
        replicas,
        master_seed: get(&map, "seed")?.unwrap_or(0),
        holding,
        output_dir: PathBuf::from(map.get("output_dir").map(String::as_str).unwrap_or(".")),
        threads: get(&map, "threads")?.unwrap_or(0),
        raw: map,
    };
    cfg.check_required()?;
    Ok(cfg)
}

impl RunConfig {
    fn check_required(&self) -> Result<(), ConfigError> {
        let need = |ok: bool, key: &str| if ok { Ok(()) } else { err(format!("{key}: required by {}", self.command)) };
        match self.command {
            Command::ThickPoints => need(self.lambda.is_some(), "lambda"),
            Command::RunWalk => need(self.t.is_some(), "t"),
            Command::AvoidedPoints => need(self.theta.is_some() || self.t.is_some(), "theta"),
            Command::LightPoints => {
                need(self.theta.is_some(), "theta")?;
                match self.b {
                    Some(b) if b > 0.0 => Ok(()),
                    Some(_) => err("b: must be positive for light-points"),
                    None => need(false, "b"),
                }
            }
            Command::ReportConstants => need(self.lambda.is_some() || self.theta.is_some(), "lambda"),
            _ => Ok(()),
        }
    }

    /// `GFFLAB_THREADS` wins over the `threads` key; 0 means the rayon default.
    pub fn effective_threads(&self) -> usize {
        std::env::var("GFFLAB_THREADS")
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .unwrap_or(self.threads)
    }
}
