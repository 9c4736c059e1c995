//! Flat `key = value` run configuration with `include` support.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::failure::Failure;

/// Every recognized key with its default. An empty default means "unset".
const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("mesh.shape", "box"),
    ("mesh.nodes", ""),
    ("mesh.tets", ""),
    ("mesh.anchors", ""),
    ("mesh.box", "12,3,3"),
    ("mesh.size", "4,1,1"),
    ("mesh.anchor", "xmin"),
    ("mesh.normalize", "true"),
    ("material.model", "neohookean"),
    ("material.youngs", "1000"),
    ("material.poisson", "0.3"),
    ("material.density", "1"),
    ("data.n_alpha", "8"),
    ("data.n_beta", "8"),
    ("data.circular", "true"),
    ("data.path", ""),
    ("ramp.factor", "1.3"),
    ("ramp.first", "0.02"),
    ("ramp.cap", "2"),
    ("ramp.max_steps", "64"),
    ("ramp.include_rest", "true"),
    ("split.val", "0.05"),
    ("split.test", "0.1"),
    ("train.epochs", "10"),
    ("train.lr", "0.001"),
    ("train.batch", "1024"),
    ("train.hidden", "2"),
    ("train.width", "16"),
    ("sim.method", "deepwarp"),
    ("sim.net", ""),
    ("sim.steps", "100"),
    ("sim.dt", "0.02"),
    ("sim.scheme", "newmark"),
    ("sim.alpha", "0"),
    ("sim.beta", "0"),
    ("sim.track", "auto"),
    ("load.kind", "directional"),
    ("load.dir", "0,-1,0"),
    ("load.point", "0,0,0"),
    ("load.axis", "0,0,1"),
    ("load.magnitude", "1"),
    ("load.release", ""),
    ("compare.methods", "linear,mw,rsw,deepwarp"),
    ("partition.file", ""),
    ("partition.other", ""),
    ("partition.other_mesh", ""),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect() }
    }
}

impl RunConfig {
    /// Defaults overlaid with `path` (and anything it includes).
    pub fn from_file(path: &Path) -> Result<Self, Failure> {
        let mut cfg = Self::default();
        cfg.load(path, &mut Vec::new())?;
        Ok(cfg)
    }

    fn load(&mut self, path: &Path, stack: &mut Vec<PathBuf>) -> Result<(), Failure> {
        let canonical = path.canonicalize().map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        if stack.contains(&canonical) {
            return Err(Failure::Validation(format!("include cycle through {}", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        stack.push(canonical);
        let base = path.parent().unwrap_or(Path::new("."));
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Failure::Validation(format!("{} line {}: expected `key = value`", path.display(), n + 1)));
            };
            let (key, value) = (key.trim(), value.trim());
            if key == "include" {
                self.load(&base.join(value), stack)?;
            } else {
                let value = if key_is_path(key) && !value.is_empty() && !value.starts_with("shape:") { base.join(value).to_string_lossy().into_owned() } else { value.to_string() };
                self.set(key, &value).map_err(|e| Failure::Validation(format!("{} line {}: {e}", path.display(), n + 1)))?;
            }
        }
        stack.pop();
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match self.values.get_mut(key) {
            Some(v) => {
                *v = value.to_string();
                Ok(())
            }
            None => Err(format!("unknown configuration key `{key}`")),
        }
    }

    /// Applies a `key=value` override from the command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), Failure> {
        let (k, v) = pair.split_once('=').ok_or_else(|| Failure::Validation(format!("expected key=value, got `{pair}`")))?;
        self.set(k.trim(), v.trim()).map_err(Failure::Validation)
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("unregistered key {key}"))
    }

    pub fn opt(&self, key: &str) -> Option<&str> {
        Some(self.str(key)).filter(|s| !s.is_empty())
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T, Failure>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.str(key);
        raw.parse().map_err(|e| Failure::Validation(format!("{key} = `{raw}`: {e}")))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, Failure>
    where
        T::Err: std::fmt::Display,
    {
        self.str(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| Failure::Validation(format!("{key}: `{s}`: {e}"))))
            .collect()
    }

    pub fn triple(&self, key: &str) -> Result<[f64; 3], Failure> {
        let v: Vec<f64> = self.list(key)?;
        v.try_into().map_err(|_| Failure::Validation(format!("{key} needs three comma-separated numbers")))
    }

    /// The effective configuration as `# key = value` comment lines.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(s, "# {k} = {v}");
        }
        s
    }
}

fn key_is_path(key: &str) -> bool {
    matches!(
        key,
        "mesh.nodes" | "mesh.tets" | "mesh.anchors" | "data.path" | "sim.net" | "partition.file" | "partition.other" | "partition.other_mesh"
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn include_and_override() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("base.cfg"), "material.youngs = 500\nsim.steps = 7 # comment\n").unwrap();
        std::fs::write(dir.path().join("run.cfg"), "include = base.cfg\nsim.steps = 9\nsim.net = nets/a.dwnn\n").unwrap();
        let mut cfg = RunConfig::from_file(&dir.path().join("run.cfg")).unwrap();
        assert_eq!(cfg.parse::<f64>("material.youngs").unwrap(), 500.0);
        assert_eq!(cfg.parse::<usize>("sim.steps").unwrap(), 9);
        assert_eq!(cfg.str("sim.net"), dir.path().join("nets/a.dwnn").to_string_lossy());
        cfg.set_pair("sim.steps=3").unwrap();
        assert_eq!(cfg.parse::<usize>("sim.steps").unwrap(), 3);
        assert!(cfg.echo().contains("# sim.steps = 3\n"));
    }

    #[test]
    fn rejects_unknown_keys_and_cycles() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.cfg"), "sim.stepz = 3\n").unwrap();
        assert!(matches!(RunConfig::from_file(&dir.path().join("a.cfg")), Err(Failure::Validation(_))));
        std::fs::write(dir.path().join("b.cfg"), "include = c.cfg\n").unwrap();
        std::fs::write(dir.path().join("c.cfg"), "include = b.cfg\n").unwrap();
        assert!(matches!(RunConfig::from_file(&dir.path().join("b.cfg")), Err(Failure::Validation(_))));
        assert!(matches!(RunConfig::from_file(&dir.path().join("missing.cfg")), Err(Failure::Io(_))));
    }
}
