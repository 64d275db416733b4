//! Grid sweeps over the free parameters `P`, `R`, `w` (and optionally `M`),
//! replaying one scripted conversation per grid point.

use std::io::{self, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Engine, EngineError, ParamOverrides, SessionParams};

pub const CSV_HEADER: &str = "P,R,w,M,mean_rho,std_rho,mean_jstar_shift,dup_rate,mean_reply_tokens";

/// Value lists per parameter. An empty list means "use the default".
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Grid {
    pub p: Vec<usize>,
    pub r: Vec<usize>,
    pub w: Vec<usize>,
    pub m: Vec<usize>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("bad grid spec: {0}")]
pub struct GridParseError(String);

impl FromStr for Grid {
    type Err = GridParseError;

    /// `P=1,5;R=2,6;w=0,2` with an optional `M=...` term.
    fn from_str(spec: &str) -> Result<Self, Self::Err> {
        let mut grid = Grid::default();
        for term in spec.split(';').map(str::trim).filter(|t| !t.is_empty()) {
            let (key, values) = term
                .split_once('=')
                .ok_or_else(|| GridParseError(format!("`{term}` is not KEY=v1,v2")))?;
            let values = values
                .split(',')
                .map(|v| v.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| GridParseError(format!("`{term}`: {e}")))?;
            let slot = match key.trim() {
                "P" | "p" => &mut grid.p,
                "R" | "r" => &mut grid.r,
                "w" | "W" => &mut grid.w,
                "M" | "m" => &mut grid.m,
                other => return Err(GridParseError(format!("unknown parameter `{other}`"))),
            };
            if !slot.is_empty() {
                return Err(GridParseError(format!("`{}` given twice", key.trim())));
            }
            *slot = values;
        }
        if grid == Grid::default() {
            return Err(GridParseError("empty grid".into()));
        }
        Ok(grid)
    }
}

impl Grid {
    /// Cartesian product in P, R, w, M order (M innermost).
    pub fn points(&self, base: &SessionParams) -> Vec<ParamOverrides> {
        let or = |v: &[usize], d: usize| if v.is_empty() { vec![d] } else { v.to_vec() };
        let ms: Vec<Option<usize>> = if self.m.is_empty() {
            vec![base.m_limit]
        } else {
            self.m.iter().copied().map(Some).collect()
        };
        let mut out = Vec::new();
        for &p in &or(&self.p, base.p) {
            for &r in &or(&self.r, base.r) {
                for &w in &or(&self.w, base.w) {
                    for &m in &ms {
                        out.push(ParamOverrides {
                            p: Some(p),
                            r: Some(r),
                            w: Some(w),
                            m,
                            ..Default::default()
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "P")]
    pub p: usize,
    #[serde(rename = "R")]
    pub r: usize,
    pub w: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub mean_rho: f64,
    pub std_rho: f64,
    pub mean_jstar_shift: f64,
    pub dup_rate: f64,
    pub mean_reply_tokens: f64,
}

impl SweepRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.p,
            self.r,
            self.w,
            self.m,
            self.mean_rho,
            self.std_rho,
            self.mean_jstar_shift,
            self.dup_rate,
            self.mean_reply_tokens
        )
    }
}

#[derive(Debug)]
pub struct SweepFailure {
    pub point: ParamOverrides,
    pub error: EngineError,
}

#[derive(Debug, Default)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
}

impl SweepReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for row in &self.rows {
            writeln!(out, "{}", row.to_csv_line())?;
        }
        out.flush()
    }
}

/// Human turns from a script: one per line, `#` starts a comment line,
/// blank lines are skipped. The first turn is the opening query.
pub fn parse_script(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// Runs the script once per grid point. A failing point is recorded and the
/// sweep moves on.
pub fn sweep(
    engine: &Engine,
    script: &[String],
    grid: &Grid,
    base: &ParamOverrides,
) -> Result<SweepReport, EngineError> {
    if script.is_empty() {
        return Err(EngineError::InvalidArgument("empty script".into()));
    }
    let defaults = engine.config().defaults.with_overrides(base);
    let mut report = SweepReport::default();
    for point in grid.points(&defaults) {
        let overrides = ParamOverrides {
            seed: base.seed,
            max_tokens: base.max_tokens,
            ..point.clone()
        };
        match run_point(engine, script, &overrides) {
            Ok(row) => report.rows.push(row),
            Err(error) => report.failures.push(SweepFailure { point, error }),
        }
    }
    Ok(report)
}

pub fn run_point(engine: &Engine, script: &[String], overrides: &ParamOverrides) -> Result<SweepRow, EngineError> {
    let (mut session, _) = engine.start_session(&script[0], overrides)?;
    for turn in &script[1..] {
        engine.step(&mut session, turn)?;
    }
    let turns = session.turns();
    let selected_rho: Vec<f64> = turns.iter().map(|t| t.rho[t.selected]).collect();
    let n = selected_rho.len() as f64;
    let mean_rho = selected_rho.iter().sum::<f64>() / n;
    let std_rho = (selected_rho.iter().map(|r| (r - mean_rho).powi(2)).sum::<f64>() / n).sqrt();
    let shifts: Vec<f64> = turns
        .windows(2)
        .map(|w| w[1].j_star.abs_diff(w[0].j_star) as f64)
        .collect();
    let mean_jstar_shift = if shifts.is_empty() {
        0.0
    } else {
        shifts.iter().sum::<f64>() / shifts.len() as f64
    };
    let (dups, total) = turns.iter().fold((0usize, 0usize), |(d, t), turn| {
        let dup = turn
            .candidates
            .iter()
            .enumerate()
            .filter(|(i, c)| turn.candidates[..*i].contains(c))
            .count();
        (d + dup, t + turn.candidates.len())
    });
    let mean_reply_tokens = turns
        .iter()
        .map(|t| t.reply.split_whitespace().count() as f64)
        .sum::<f64>()
        / n;
    let params = session.params();
    Ok(SweepRow {
        p: params.p,
        r: params.r,
        w: params.w,
        m: session.m().expect("started"),
        mean_rho,
        std_rho,
        mean_jstar_shift,
        dup_rate: dups as f64 / total as f64,
        mean_reply_tokens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_grid_spec() {
        let g: Grid = "P=1,5;R=2,6;w=0,2".parse().unwrap();
        assert_eq!(g.p, [1, 5]);
        assert_eq!(g.r, [2, 6]);
        assert_eq!(g.w, [0, 2]);
        assert!(g.m.is_empty());
        assert_eq!(g.points(&SessionParams::default()).len(), 8);
    }

    #[test]
    fn missing_keys_use_defaults() {
        let g: Grid = "P=3".parse().unwrap();
        let pts = g.points(&SessionParams::default());
        assert_eq!(pts.len(), 1);
        assert_eq!((pts[0].p, pts[0].r, pts[0].w), (Some(3), Some(6), Some(2)));
    }

    #[test]
    fn rejects_bad_specs() {
        assert!("".parse::<Grid>().is_err());
        assert!("P=1;P=2".parse::<Grid>().is_err());
        assert!("Q=1".parse::<Grid>().is_err());
        assert!("P=x".parse::<Grid>().is_err());
        assert!("P".parse::<Grid>().is_err());
    }

    #[test]
    fn script_skips_comments() {
        assert_eq!(parse_script("# intro\nfirst\n\n  second  \n#x"), ["first", "second"]);
    }
}
