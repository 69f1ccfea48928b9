//! Plain-text checkpoints.
//!
//! ```text
//! # npga-checkpoint v1
//! hidden_units 250
//! input_dim 12
//! projections 2x250          (comma separated H×P, or `-`)
//! heads 3x250                (comma separated M×P, or `-`)
//! values 3765
//! <one number per line, in the flat parameter order>
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{NpgaError, Result};
use crate::objective::{ParamLayout, ParamVector};

const MAGIC: &str = "# npga-checkpoint v1";

fn fmt_shapes(shapes: &[(usize, usize)]) -> String {
    if shapes.is_empty() {
        return "-".into();
    }
    shapes
        .iter()
        .map(|(a, b)| format!("{a}x{b}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_shapes(s: &str) -> Option<Vec<(usize, usize)>> {
    if s == "-" {
        return Some(Vec::new());
    }
    s.split(',')
        .map(|p| {
            let (a, b) = p.split_once('x')?;
            Some((a.parse().ok()?, b.parse().ok()?))
        })
        .collect()
}

pub fn checkpoint_to_string(layout: &ParamLayout, params: &ParamVector) -> Result<String> {
    if params.len() != layout.len() {
        return Err(NpgaError::Layout(format!(
            "{} values for a layout of {}",
            params.len(),
            layout.len()
        )));
    }
    let mut s = String::new();
    writeln!(s, "{MAGIC}").unwrap();
    writeln!(s, "hidden_units {}", layout.hidden_units).unwrap();
    writeln!(s, "input_dim {}", layout.input_dim).unwrap();
    writeln!(s, "projections {}", fmt_shapes(&layout.projections)).unwrap();
    writeln!(s, "heads {}", fmt_shapes(&layout.heads)).unwrap();
    writeln!(s, "values {}", params.len()).unwrap();
    for v in params.as_slice() {
        writeln!(s, "{v:?}").unwrap();
    }
    Ok(s)
}

pub fn write_checkpoint(path: &Path, layout: &ParamLayout, params: &ParamVector) -> Result<()> {
    fs::write(path, checkpoint_to_string(layout, params)?)?;
    Ok(())
}

pub fn parse_checkpoint(text: &str) -> Result<(ParamLayout, ParamVector)> {
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(NpgaError::Format(format!("checkpoint must start with `{MAGIC}`")));
    }
    let mut field = |name: &str| -> Result<String> {
        let line = lines.next().unwrap_or("");
        line.strip_prefix(name)
            .and_then(|r| r.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| NpgaError::Format(format!("expected checkpoint field `{name}`, got `{line}`")))
    };
    let bad = |what: &str| NpgaError::Format(format!("malformed checkpoint field `{what}`"));
    let hidden_units = field("hidden_units")?.parse().map_err(|_| bad("hidden_units"))?;
    let input_dim = field("input_dim")?.parse().map_err(|_| bad("input_dim"))?;
    let projections = parse_shapes(&field("projections")?).ok_or_else(|| bad("projections"))?;
    let heads = parse_shapes(&field("heads")?).ok_or_else(|| bad("heads"))?;
    let count: usize = field("values")?.parse().map_err(|_| bad("values"))?;
    let layout = ParamLayout {
        hidden_units,
        input_dim,
        projections,
        heads,
    };
    if count != layout.len() {
        return Err(NpgaError::Layout(format!(
            "header declares {count} values, layout needs {}",
            layout.len()
        )));
    }
    let values = lines
        .map(|l| {
            l.trim()
                .parse::<f64>()
                .map_err(|_| NpgaError::Format(format!("bad checkpoint value `{l}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() != count {
        return Err(NpgaError::Format(format!(
            "expected {count} values, found {}",
            values.len()
        )));
    }
    Ok((layout, ParamVector::from(nalgebra::DVector::from_vec(values))))
}

pub fn read_checkpoint(path: &Path) -> Result<(ParamLayout, ParamVector)> {
    parse_checkpoint(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn round_trip_is_exact() {
        let layout = ParamLayout {
            hidden_units: 3,
            input_dim: 2,
            projections: vec![(2, 3)],
            heads: vec![(2, 3)],
        };
        let v = ParamVector::from(DVector::from_fn(layout.len(), |i, _| (i as f64).sin() / 3.0));
        let text = checkpoint_to_string(&layout, &v).unwrap();
        assert_eq!(parse_checkpoint(&text).unwrap(), (layout, v));
    }

    #[test]
    fn truncated_checkpoint_rejected() {
        let layout = ParamLayout {
            hidden_units: 1,
            input_dim: 1,
            projections: vec![],
            heads: vec![],
        };
        let text = checkpoint_to_string(&layout, &ParamVector::zeros(&layout)).unwrap();
        let cut: String = text.lines().take(7).map(|l| format!("{l}\n")).collect();
        assert!(parse_checkpoint(&cut).is_err());
        assert!(parse_checkpoint("garbage").is_err());
    }
}
