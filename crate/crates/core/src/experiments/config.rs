use std::path::Path;

use super::{ExperimentSpec, Sweep};
use crate::error::{Error, Result};

/// Loads a flat JSON configuration on top of the defaults.
pub fn load_config_file(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    let doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let mut spec = ExperimentSpec::default();
    spec.apply_json(&doc)?;
    Ok(spec)
}

/// Parses `name=min:max:step` or `name=v1,v2,...`.
pub fn parse_sweep(text: &str) -> Result<Sweep> {
    let (name, range) = text
        .split_once('=')
        .ok_or_else(|| Error::Parse(format!("sweep '{text}' is not name=min:max:step")))?;
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad number '{s}' in sweep '{text}'")))
    };
    let values = if range.contains(':') {
        let parts: Vec<&str> = range.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Parse(format!("sweep '{text}' is not name=min:max:step")));
        }
        let (lo, hi, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || hi < lo {
            return Err(Error::Parse(format!("sweep '{text}' needs min <= max and step > 0")));
        }
        let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        // snap to a 1e-9 grid so 0.1-style steps print cleanly
        (0..count).map(|i| ((lo + i as f64 * step) * 1e9).round() / 1e9).collect()
    } else {
        range.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    Ok(Sweep {
        param: name.trim().to_string(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_syntax() {
        let s = parse_sweep("p_train_dbm=-7:23:2").unwrap();
        assert_eq!(s.param, "p_train_dbm");
        assert_eq!(s.values.len(), 16);
        assert_eq!(s.values[0], -7.0);
        assert_eq!(s.values[15], 23.0);
        let s = parse_sweep("p_data_dbm=0:1:0.1").unwrap();
        assert_eq!(s.values.len(), 11);
        assert_eq!(s.values[3], 0.3);
        assert_eq!(parse_sweep("tau_d=16,64,128").unwrap().values, vec![16.0, 64.0, 128.0]);
    }

    #[test]
    fn malformed_sweeps() {
        for bad in ["p_train_dbm", "x=1:2", "x=3:1:1", "x=0:1:0", "x=a:b:c"] {
            assert!(parse_sweep(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn config_file_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"p_mbs_dbm": 40, "tau_d": 64, "metric": "ber", "pathloss_model": "three_gpp"}"#).unwrap();
        let spec = load_config_file(&path).unwrap();
        assert_eq!(spec.base.p_mbs_dbm, 40.0);
        assert_eq!(spec.base.tau_d, 64);
        assert_eq!(spec.metric, super::super::Metric::Ber);
        std::fs::write(&path, r#"{"p_mbs": 40}"#).unwrap();
        assert!(load_config_file(&path).is_err());
        assert!(load_config_file(&dir.path().join("missing.json")).is_err());
    }
}
