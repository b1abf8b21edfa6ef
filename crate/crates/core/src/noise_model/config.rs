use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MonotoneTable, NoiseSpec, SpectralDensity, TemporalKernel};
use crate::error::{LabError, Result};

/// JSON form of a [`NoiseSpec`]. Table paths are resolved against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecConfig {
    pub family: String,
    #[serde(rename = "H0", default, skip_serializing_if = "Option::is_none")]
    pub h0: Option<f64>,
    #[serde(rename = "H1", default, skip_serializing_if = "Option::is_none")]
    pub h1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_table: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma0: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma0_table: Option<String>,
    #[serde(rename = "gamma0_H0", default, skip_serializing_if = "Option::is_none")]
    pub gamma0_h0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma0_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma0_value: Option<f64>,
}

impl Default for SpecConfig {
    fn default() -> Self {
        Self {
            family: "H2".into(),
            h0: Some(0.75),
            h1: Some(0.25),
            phi: None,
            phi_table: None,
            phi_exponent: None,
            phi_beta: None,
            phi_value: None,
            kappa0: None,
            gamma0: None,
            gamma0_table: None,
            gamma0_h0: None,
            gamma0_rate: None,
            gamma0_value: None,
        }
    }
}

fn need<T: Copy>(v: Option<T>, key: &str) -> Result<T> {
    v.ok_or_else(|| LabError::Config(format!("missing key `{key}`")))
}

impl SpecConfig {
    pub fn build(&self, base_dir: &Path) -> Result<NoiseSpec> {
        match self.family.as_str() {
            "H2" => NoiseSpec::h2(need(self.h0, "H0")?, need(self.h1, "H1")?),
            "H1" => {
                let phi = match need(self.phi.as_deref(), "phi")? {
                    "table" => {
                        let p = need(self.phi_table.as_deref(), "phi_table")?;
                        SpectralDensity::Table(MonotoneTable::from_csv(&base_dir.join(p), "xi", "phi")?)
                    }
                    "power" => SpectralDensity::Power { exponent: need(self.phi_exponent, "phi_exponent")? },
                    "saturated" => SpectralDensity::Saturated { beta: need(self.phi_beta, "phi_beta")? },
                    "gauss_bump" => SpectralDensity::GaussBump,
                    "constant" => SpectralDensity::Constant { value: need(self.phi_value, "phi_value")? },
                    "zero" => SpectralDensity::Zero,
                    other => return Err(LabError::Config(format!("unknown phi kind `{other}`"))),
                };
                let gamma0 = match need(self.gamma0.as_deref(), "gamma0")? {
                    "table" => {
                        let p = need(self.gamma0_table.as_deref(), "gamma0_table")?;
                        TemporalKernel::Table(MonotoneTable::from_csv(&base_dir.join(p), "tau", "gamma0")?)
                    }
                    "power" => TemporalKernel::Power { h0: need(self.gamma0_h0, "gamma0_H0")? },
                    "exp" => TemporalKernel::Exponential { rate: need(self.gamma0_rate, "gamma0_rate")? },
                    "constant" => TemporalKernel::Constant { value: need(self.gamma0_value, "gamma0_value")? },
                    other => return Err(LabError::Config(format!("unknown gamma0 kind `{other}`"))),
                };
                NoiseSpec::h1(phi, gamma0, need(self.kappa0, "kappa0")?)
            }
            other => Err(LabError::Config(format!("unknown family `{other}`"))),
        }
    }
}

impl NoiseSpec {
    /// Parse a JSON spec block; relative table paths resolve against `base_dir`.
    pub fn from_json_str(json: &str, base_dir: &Path) -> Result<Self> {
        let cfg: SpecConfig = serde_json::from_str(json)?;
        cfg.build(base_dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn fractional_block() {
        let s = NoiseSpec::from_json_str(r#"{"family":"H2","H0":0.75,"H1":0.25}"#, Path::new(".")).unwrap();
        assert_eq!(s, NoiseSpec::default_h2());
    }

    #[test]
    fn missing_key_is_config_error() {
        let e = NoiseSpec::from_json_str(r#"{"family":"H2","H0":0.75}"#, Path::new(".")).unwrap_err();
        assert!(matches!(e, LabError::Config(_)));
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(NoiseSpec::from_json_str(r#"{"family":"H2","H0":0.75,"H1":0.25,"Hx":1}"#, Path::new(".")).is_err());
    }

    #[test]
    fn tabulated_general_block() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = std::fs::File::create(dir.path().join("phi.csv")).unwrap();
        writeln!(f, "xi,phi").unwrap();
        for i in 0..=40 {
            let x = i as f64 * 0.25;
            writeln!(f, "{x},{}", x * x * (-x * x).exp()).unwrap();
        }
        drop(f);
        let json = r#"{"family":"H1","phi":"table","phi_table":"phi.csv","kappa0":2.0,"gamma0":"exp","gamma0_rate":1.0}"#;
        let s = NoiseSpec::from_json_str(json, dir.path()).unwrap();
        assert_eq!(s.phi(0.0).unwrap(), 0.0);
        assert!((s.phi(-1.0).unwrap() - (-1f64).exp()).abs() < 1e-12);
    }
}
