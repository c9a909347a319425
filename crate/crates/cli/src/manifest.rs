//! Run manifests: a JSON record written next to every output that is enough to
//! re-run the command and reproduce the output byte for byte.

use std::path::{Path, PathBuf};

use gradattr::{Error, Method, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub model: Option<String>,
    /// Input tensor file or dataset source.
    pub input: Option<String>,
    pub methods: Vec<Method>,
    /// Command-specific settings after defaults were applied.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub outputs: Vec<String>,
    pub tool_version: String,
    /// Arguments as given, without the program name. `rerun` replays these.
    pub args: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, args: &[String]) -> Self {
        RunManifest {
            command: command.to_string(),
            model: None,
            input: None,
            methods: Vec::new(),
            config: serde_json::Value::Null,
            seed: None,
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            args: args.to_vec(),
        }
    }

    /// `<output>.manifest.json`.
    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output.as_os_str().to_owned();
        name.push(".manifest.json");
        PathBuf::from(name)
    }

    /// Writes the manifest next to the first output.
    pub fn write(&self) -> Result<PathBuf> {
        let first = self
            .outputs
            .first()
            .ok_or_else(|| Error::InvalidArgument("manifest has no outputs".into()))?;
        let path = Self::path_for(Path::new(first));
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Format(e.to_string()))
    }

    /// Arguments for a replay, with `--out` redirected when `out` is given.
    pub fn replay_args(&self, out: Option<&str>) -> Result<Vec<String>> {
        let mut args = self.args.clone();
        let Some(out) = out else {
            return Ok(args);
        };
        let mut replaced = false;
        for i in 0..args.len() {
            if args[i] == "--out" && i + 1 < args.len() {
                args[i + 1] = out.to_string();
                replaced = true;
            } else if args[i].starts_with("--out=") {
                args[i] = format!("--out={out}");
                replaced = true;
            }
        }
        if !replaced {
            return Err(Error::Format("manifest arguments have no --out".into()));
        }
        Ok(args)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn sidecar_path() {
        assert_eq!(
            RunManifest::path_for(Path::new("out/s.csv")),
            PathBuf::from("out/s.csv.manifest.json")
        );
    }

    #[test]
    fn replay_redirects_output() {
        let m = RunManifest::new("render", &args(&["render", "--map", "r.json", "--out", "a.ppm"]));
        assert_eq!(m.replay_args(None).unwrap(), m.args);
        assert_eq!(
            m.replay_args(Some("b.ppm")).unwrap(),
            args(&["render", "--map", "r.json", "--out", "b.ppm"])
        );
        let m = RunManifest::new("render", &args(&["render", "--out=a.ppm"]));
        assert_eq!(m.replay_args(Some("c.ppm")).unwrap(), args(&["render", "--out=c.ppm"]));
        assert!(RunManifest::new("x", &args(&["x"])).replay_args(Some("y")).is_err());
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("m.json");
        let mut m = RunManifest::new("train", &args(&["train", "--out", "m.json"]));
        m.seed = Some(3);
        m.methods = vec![Method::GradientInput];
        m.outputs = vec![out.display().to_string()];
        let path = m.write().unwrap();
        assert_eq!(RunManifest::load(path).unwrap(), m);
    }
}
