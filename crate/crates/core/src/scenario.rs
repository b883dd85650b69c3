//! Scenario files: a TOML document describing the network, costs, bounds,
//! tolerances, optional gains, the schedule and integration options.
//!
//! Infinite bounds are written with TOML's native `inf` literal, e.g.
//! `u_e_max = [inf, inf]`.

use crate::controllers::SatBounds;
use crate::error::Error;
use crate::gains::Gains;
use crate::graph::NetworkSpec;
use crate::optimum::CostModel;
use crate::simulator::{InitMode, Mode, Scenario, Segment, SimOptions};
use crate::Result;
use nalgebra::DVector;
use serde::Deserialize;
use std::path::Path;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkSection {
    n: usize,
    edges: Vec<(usize, usize)>,
    comm_edges: Option<Vec<(usize, usize)>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostSection {
    q: Vec<f64>,
    r: Vec<f64>,
    s: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundsSection {
    u_p_min: Vec<f64>,
    u_p_max: Vec<f64>,
    u_e_max: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToleranceSection {
    eps1: f64,
    eps2: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentSection {
    t_start: f64,
    t_end: f64,
    d: Vec<f64>,
    xbar_start: Vec<f64>,
    xbar_slope: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitSection {
    mode: String,
    x: Option<Vec<f64>>,
    x_p: Option<Vec<f64>>,
    x_e: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimSection {
    dt: f64,
    output_stride: usize,
    mode: Mode,
}

/// Raw deserialized scenario document.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    network: NetworkSection,
    cost: CostSection,
    bounds: BoundsSection,
    tolerances: ToleranceSection,
    gains: Option<Gains>,
    init: Option<InitSection>,
    segments: Vec<SegmentSection>,
    sim: SimSection,
}

/// A fully parsed scenario file.
#[derive(Debug, Clone)]
pub struct ScenarioFile {
    pub scenario: Scenario,
    /// Explicit gains, when the file pins them.
    pub gains: Option<Gains>,
    pub options: SimOptions,
}

/// Parse a scenario document from TOML text.
pub fn parse_scenario(text: &str) -> Result<ScenarioFile> {
    let doc: ScenarioDoc = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    build(doc)
}

/// Load a scenario file from disk.
pub fn load_scenario(path: &Path) -> Result<ScenarioFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
    parse_scenario(&text)
}

fn build(doc: ScenarioDoc) -> Result<ScenarioFile> {
    let spec = NetworkSpec {
        n: doc.network.n,
        edges: doc.network.edges,
        comm_edges: doc.network.comm_edges,
    };
    spec.validate().map_err(reparse)?;
    let cost = CostModel::new(doc.cost.q, doc.cost.r, doc.cost.s).map_err(reparse)?;
    let bounds = SatBounds::new(
        DVector::from_vec(doc.bounds.u_p_min),
        DVector::from_vec(doc.bounds.u_p_max),
        DVector::from_vec(doc.bounds.u_e_max),
    )
    .map_err(reparse)?;
    let segments: Vec<Segment> = doc
        .segments
        .into_iter()
        .map(|s| Segment {
            t_start: s.t_start,
            t_end: s.t_end,
            d: DVector::from_vec(s.d),
            xbar_start: DVector::from_vec(s.xbar_start),
            xbar_slope: DVector::from_vec(s.xbar_slope),
        })
        .collect();
    let init = match doc.init {
        None => InitMode::SteadyState,
        Some(sec) => match sec.mode.as_str() {
            "steady-state" => InitMode::SteadyState,
            "explicit" => {
                let take = |v: Option<Vec<f64>>, name: &str| {
                    v.map(DVector::from_vec).ok_or_else(|| {
                        Error::Parse(format!("explicit init requires the `{name}` vector"))
                    })
                };
                InitMode::Explicit {
                    x: take(sec.x, "x")?,
                    x_p: take(sec.x_p, "x_p")?,
                    x_e: take(sec.x_e, "x_e")?,
                }
            }
            other => {
                return Err(Error::Parse(format!(
                    "init mode must be \"steady-state\" or \"explicit\", got {other:?}"
                )))
            }
        },
    };
    let scenario = Scenario {
        spec,
        cost,
        bounds,
        eps1: doc.tolerances.eps1,
        eps2: doc.tolerances.eps2,
        segments,
        init,
    };
    validate_structure(&scenario).map_err(reparse)?;
    if let Some(g) = &doc.gains {
        g.validate().map_err(reparse)?;
    }
    let options = SimOptions {
        dt: doc.sim.dt,
        output_stride: doc.sim.output_stride,
        mode: doc.sim.mode,
    };
    Ok(ScenarioFile {
        scenario,
        gains: doc.gains,
        options,
    })
}

/// Structural checks that do not depend on integration options.
pub fn validate_structure(sc: &Scenario) -> Result<()> {
    sc.spec.validate()?;
    sc.cost.validate()?;
    sc.bounds.validate()?;
    if sc.cost.n() != sc.spec.n
        || sc.bounds.u_p_min.len() != sc.spec.n
        || sc.bounds.u_e_max.len() != sc.spec.m()
    {
        return Err(Error::Dimension(
            "cost/bounds sizes do not match the network".into(),
        ));
    }
    if !(sc.eps1 > 0.0 && sc.eps2 > 0.0) {
        return Err(Error::Validation("eps1 and eps2 must be positive".into()));
    }
    if sc.segments.is_empty() {
        return Err(Error::Validation(
            "schedule needs at least one segment".into(),
        ));
    }
    let mut prev_end: Option<f64> = None;
    for (k, seg) in sc.segments.iter().enumerate() {
        let forward = seg.t_end > seg.t_start;
        if !forward {
            return Err(Error::Validation(format!(
                "segment {k} has non-positive duration"
            )));
        }
        if seg.d.len() != sc.spec.n
            || seg.xbar_start.len() != sc.spec.n
            || seg.xbar_slope.len() != sc.spec.n
        {
            return Err(Error::Dimension(format!(
                "segment {k} vectors must have length n"
            )));
        }
        if let Some(p) = prev_end {
            if (seg.t_start - p).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "segments must be contiguous and non-overlapping; segment {k} starts at {} but the previous one ends at {p}",
                    seg.t_start
                )));
            }
        }
        prev_end = Some(seg.t_end);
    }
    if let InitMode::Explicit { x, x_p, x_e } = &sc.init {
        if x.len() != sc.spec.n || x_p.len() != sc.spec.n || x_e.len() != sc.spec.m() {
            return Err(Error::Dimension(
                "explicit init vectors have wrong lengths".into(),
            ));
        }
    }
    Ok(())
}

fn reparse(e: Error) -> Error {
    Error::Parse(e.to_string())
}
