//! TOML format files.
//!
//! ```toml
//! phi = 4
//!
//! [[vertices]]
//! id = "x"
//! kind = "input"          # input | weight
//!
//! [[edges]]
//! id = "kh"
//! dim = 3
//! endpoints = ["x", "w1"]
//! kind = "kernel_window"  # input_channel | output_channel | rank | kernel_window
//! input_len = 16          # kernel windows only: input spatial length
//! stride = 1              # kernel windows only, default 1
//! padding = 1             # kernel windows only, default 0
//! window = "forward"      # kernel windows only: forward | backward
//! ```
//!
//! Unknown keys are errors. For a backward window, `input_len`, `stride` and
//! `padding` describe the forward window it was derived from.

use serde::{Deserialize, Serialize};

use super::{Edge, EdgeKind, LayerFormat, Vertex, Window};
use crate::error::{Error, Result};
use crate::tensor::DummySpec;
use crate::transform::backward_dummy;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFormat {
    phi: usize,
    vertices: Vec<Vertex>,
    edges: Vec<RawEdge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawKind {
    InputChannel,
    OutputChannel,
    Rank,
    KernelWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdge {
    id: String,
    dim: usize,
    endpoints: Vec<String>,
    kind: RawKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    padding: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    window: Option<Direction>,
}

pub fn parse_format(text: &str) -> Result<LayerFormat> {
    let raw: RawFormat = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map(|s| line_col(text, s.start)).unwrap_or((0, 0));
        Error::Parse {
            line,
            column,
            message: e.message().trim().to_string(),
        }
    })?;
    let mut problems = Vec::new();
    let edges: Vec<Edge> = raw
        .edges
        .into_iter()
        .filter_map(|e| convert(e, &mut problems))
        .collect();
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    LayerFormat::new(raw.vertices, edges, raw.phi)
}

fn convert(e: RawEdge, problems: &mut Vec<String>) -> Option<Edge> {
    let kind = match e.kind {
        RawKind::InputChannel => EdgeKind::InputChannel,
        RawKind::OutputChannel => EdgeKind::OutputChannel,
        RawKind::Rank => EdgeKind::Rank,
        RawKind::KernelWindow => {
            let Some(alpha) = e.input_len else {
                problems.push(format!("edge `{}`: kernel windows need `input_len`", e.id));
                return None;
            };
            let spec = DummySpec {
                alpha,
                beta: e.dim,
                stride: e.stride.unwrap_or(1),
                padding: e.padding.unwrap_or(0),
            };
            let window = match e.window.unwrap_or(Direction::Forward) {
                Direction::Forward => Window::Forward(spec),
                Direction::Backward => match backward_dummy(&spec) {
                    Ok(b) => Window::Backward(b),
                    Err(err) => {
                        problems.push(format!("edge `{}`: {err}", e.id));
                        return None;
                    }
                },
            };
            EdgeKind::KernelWindow(window)
        }
    };
    if e.kind != RawKind::KernelWindow
        && (e.input_len.is_some() || e.stride.is_some() || e.padding.is_some() || e.window.is_some())
    {
        problems.push(format!("edge `{}`: window keys on a non-window edge", e.id));
    }
    Some(Edge {
        id: e.id,
        dim: e.dim,
        endpoints: e.endpoints,
        kind,
    })
}

pub fn serialize_format(f: &LayerFormat) -> String {
    let edges = f
        .edges
        .iter()
        .map(|e| {
            let mut raw = RawEdge {
                id: e.id.clone(),
                dim: e.dim,
                endpoints: e.endpoints.clone(),
                kind: RawKind::Rank,
                input_len: None,
                stride: None,
                padding: None,
                window: None,
            };
            match &e.kind {
                EdgeKind::InputChannel => raw.kind = RawKind::InputChannel,
                EdgeKind::OutputChannel => raw.kind = RawKind::OutputChannel,
                EdgeKind::Rank => {}
                EdgeKind::KernelWindow(w) => {
                    let s = w.forward_spec();
                    raw.kind = RawKind::KernelWindow;
                    raw.input_len = Some(s.alpha);
                    raw.stride = Some(s.stride);
                    raw.padding = Some(s.padding);
                    raw.window = Some(match w {
                        Window::Forward(_) => Direction::Forward,
                        Window::Backward(_) => Direction::Backward,
                    });
                }
            }
            raw
        })
        .collect();
    let raw = RawFormat {
        phi: f.phi,
        vertices: f.vertices.clone(),
        edges,
    };
    toml::to_string(&raw).expect("format serializes to TOML")
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

#[cfg(test)]
mod tests {
    use super::*;

    const STANDARD: &str = r#"
phi = 1

[[vertices]]
id = "x"
kind = "input"

[[vertices]]
id = "w"
kind = "weight"

[[edges]]
id = "c_in"
dim = 3
endpoints = ["x", "w"]
kind = "input_channel"

[[edges]]
id = "c_out"
dim = 8
endpoints = ["w"]
kind = "output_channel"

[[edges]]
id = "kh"
dim = 3
endpoints = ["x", "w"]
kind = "kernel_window"
input_len = 10
padding = 1

[[edges]]
id = "kw"
dim = 3
endpoints = ["x", "w"]
kind = "kernel_window"
input_len = 10
padding = 1
"#;

    #[test]
    fn parses_minimal_conv() {
        let f = parse_format(STANDARD).unwrap();
        assert_eq!(f.weight_count(), 1);
        assert_eq!(f.weight_shape("w"), vec![3, 8, 3, 3]);
        assert_eq!(f.output_shape(), vec![8, 10, 10]);
    }

    #[test]
    fn round_trip() {
        let f = parse_format(STANDARD).unwrap();
        assert_eq!(parse_format(&serialize_format(&f)).unwrap(), f);
    }

    #[test]
    fn unknown_key_is_parse_error_with_position() {
        let text = STANDARD.replace("padding = 1\n\n[[edges]]", "padding = 1\ncolour = 2\n\n[[edges]]");
        match parse_format(&text) {
            Err(Error::Parse { line, column, .. }) => {
                let want = text.lines().position(|l| l.starts_with("colour")).unwrap() + 1;
                assert_eq!((line, column), (want, 1));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_error_reports_line() {
        let err = parse_format("phi = 1\n[[vertices]\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn edgeless_weight_is_validation_error() {
        let text = format!("{STANDARD}\n[[vertices]]\nid = \"spare\"\nkind = \"weight\"\n");
        assert!(matches!(parse_format(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn window_keys_rejected_on_channel_edges() {
        let text = STANDARD.replace("kind = \"output_channel\"", "kind = \"output_channel\"\nstride = 2");
        assert!(matches!(parse_format(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn line_col_counts_from_one() {
        assert_eq!(line_col("ab\ncd", 4), (2, 2));
        assert_eq!(line_col("ab", 0), (1, 1));
    }
}
