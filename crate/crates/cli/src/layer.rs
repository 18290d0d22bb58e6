use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use graphinit::format::{builtin_format, parse_format, BuiltinKind, KernelParams, LayerFormat};

/// Where a layer format comes from: TOML files or a builtin topology.
#[derive(Debug, Args)]
pub struct LayerArgs {
    /// Layer format file; repeat to stack one layer per file.
    #[arg(long, conflicts_with = "builtin")]
    pub format: Vec<PathBuf>,
    /// standard | low-rank | tucker2 | cp | tt | tr | odd
    #[arg(long, value_parser = parse_builtin)]
    pub builtin: Option<BuiltinKind>,
    /// Input channel dimensions, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub in_dims: Vec<usize>,
    /// Output channel dimensions, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub out_dims: Vec<usize>,
    /// Rank dimensions; a single value applies to every rank edge.
    #[arg(long, value_delimiter = ',')]
    pub ranks: Vec<usize>,
    /// Kernel size.
    #[arg(long)]
    pub kernel: Option<usize>,
    /// Spatial input length per axis.
    #[arg(long)]
    pub input_len: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub padding: Option<usize>,
    /// Number of spatial axes, 1 or 2.
    #[arg(long)]
    pub spatial: Option<usize>,
    /// Builtin without kernel windows.
    #[arg(long)]
    pub linear: bool,
    /// Overrides the hyperedge multiplicity.
    #[arg(long)]
    pub phi: Option<usize>,
}

fn parse_builtin(s: &str) -> Result<BuiltinKind, String> {
    s.parse().map_err(|e: graphinit::Error| e.to_string())
}

impl LayerArgs {
    pub fn is_empty(&self) -> bool {
        self.format.is_empty() && self.builtin.is_none()
    }

    /// Display name of the source.
    pub fn name(&self) -> String {
        match self.builtin {
            Some(kind) => kind.name().to_string(),
            None => self
                .format
                .iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(","),
        }
    }

    pub fn formats(&self) -> Result<Vec<LayerFormat>> {
        let mut formats = match self.builtin {
            Some(kind) => vec![self.builtin_layer(kind)?],
            None if self.format.is_empty() => bail!("give --format FILE or --builtin NAME"),
            None => self.format.iter().map(load).collect::<Result<_>>()?,
        };
        if let Some(phi) = self.phi {
            for f in &mut formats {
                f.phi = phi;
                f.validate()?;
            }
        }
        Ok(formats)
    }

    pub fn single(&self) -> Result<LayerFormat> {
        let mut formats = self.formats()?;
        if formats.len() != 1 {
            bail!("expected one layer format, got {}", formats.len());
        }
        Ok(formats.remove(0))
    }

    fn builtin_layer(&self, kind: BuiltinKind) -> Result<LayerFormat> {
        let mut p = kind.default_params();
        if !self.in_dims.is_empty() {
            p.in_dims = self.in_dims.clone();
        }
        if !self.out_dims.is_empty() {
            p.out_dims = self.out_dims.clone();
        }
        if !self.ranks.is_empty() {
            p.ranks = self.ranks.clone();
        }
        if self.linear {
            p.kernel = None;
        } else {
            let d = p.kernel.unwrap_or_default();
            p.kernel = Some(KernelParams {
                size: self.kernel.unwrap_or(d.size),
                input_len: self.input_len.unwrap_or(d.input_len),
                stride: self.stride.unwrap_or(d.stride),
                padding: self.padding.unwrap_or(d.padding),
                spatial: self.spatial.unwrap_or(d.spatial),
            });
        }
        Ok(builtin_format(kind, &p)?)
    }
}

fn load(path: &PathBuf) -> Result<LayerFormat> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_format(&text).with_context(|| format!("in {}", path.display()))
}

#[cfg(test)]
mod tests {
    use clap::Parser;

    use super::*;

    #[derive(Parser)]
    struct Wrap {
        #[command(flatten)]
        layer: LayerArgs,
    }

    fn args(a: &[&str]) -> LayerArgs {
        Wrap::parse_from(std::iter::once("t").chain(a.iter().copied())).layer
    }

    #[test]
    fn builtin_overrides_defaults() {
        let f = args(&["--builtin", "tucker2", "--in-dims", "96", "--ranks", "10", "--phi", "4"])
            .single()
            .unwrap();
        assert_eq!(f.phi, 4);
        assert_eq!(f.input_channel_product(), 96);
        assert_eq!(f.output_channel_product(), 8);
        assert_eq!(f.rank_edges().map(|e| e.dim).collect::<Vec<_>>(), [10, 10]);
    }

    #[test]
    fn linear_drops_windows() {
        let f = args(&["--builtin", "tt", "--linear"]).single().unwrap();
        assert_eq!(f.spatial().count(), 0);
    }

    #[test]
    fn missing_source_is_an_error() {
        assert!(args(&[]).formats().is_err());
        assert!(args(&["--builtin", "standard", "--phi", "0"]).single().is_err());
    }
}
