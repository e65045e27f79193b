//! Versioned text checkpoints of a [`ChannelModel`].
//!
//! ```text
//! raea-checkpoint 1
//! kind Literal
//! dims d_entity=64 d_attr=128 d_value=128 d_init=128 hidden=64,64 d_relation=64
//! options combine=sum rgat=true leaky_slope=0.2
//! entities 0 0
//! param attr.0.w 256 64
//! <row-major values separated by spaces>
//! ...
//! ```
//! Values are written in shortest round-trip form, so loading reproduces
//! the parameters bit for bit.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kg::ChannelKind;
use crate::net::{ChannelModel, DimensionsConfig, NetOptions, RelationCombine, Side};

const MAGIC: &str = "raea-checkpoint";
const VERSION: u32 = 1;

pub fn to_text(model: &ChannelModel) -> String {
    let d = &model.dims;
    let o = &model.options;
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let _ = writeln!(out, "kind {}", model.kind);
    let hidden: Vec<String> = d.hidden.iter().map(usize::to_string).collect();
    let _ = writeln!(
        out,
        "dims d_entity={} d_attr={} d_value={} d_init={} hidden={} d_relation={}",
        d.d_entity,
        d.d_attr,
        d.d_value,
        d.d_init,
        hidden.join(","),
        d.d_relation
    );
    let combine = match o.relation_combine {
        RelationCombine::Sum => "sum",
        RelationCombine::Concat => "concat",
    };
    let _ = writeln!(out, "options combine={combine} rgat={} leaky_slope={:e}", o.rgat, o.leaky_slope);
    let _ = writeln!(
        out,
        "entities {} {}",
        model.num_entities(Side::Source).unwrap_or(0),
        model.num_entities(Side::Target).unwrap_or(0)
    );
    for (_, p) in model.store.iter() {
        let _ = writeln!(out, "param {} {} {}", p.name, p.value.rows(), p.value.cols());
        let values: Vec<String> = p.value.data().iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(out, "{}", values.join(" "));
    }
    out
}

pub fn save(model: &ChannelModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_text(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ChannelModel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read(file, &path.display().to_string())
}

fn key_values<'a>(line: &'a str, tag: &str, origin: &str, lineno: usize) -> Result<Vec<(&'a str, &'a str)>> {
    let rest = line
        .strip_prefix(tag)
        .ok_or_else(|| Error::parse(origin, lineno, format!("expected `{tag}` line")))?;
    rest.split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .ok_or_else(|| Error::parse(origin, lineno, format!("expected key=value, found {kv:?}")))
        })
        .collect()
}

fn num<T: std::str::FromStr>(s: &str, origin: &str, lineno: usize) -> Result<T> {
    s.parse()
        .map_err(|_| Error::parse(origin, lineno, format!("invalid number {s:?}")))
}

pub fn read(reader: impl Read, origin: &str) -> Result<ChannelModel> {
    let lines: Vec<String> = BufReader::new(reader)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(origin, e))?;
    let line = |i: usize| -> Result<&str> {
        lines
            .get(i)
            .map(String::as_str)
            .ok_or_else(|| Error::parse(origin, i + 1, "unexpected end of checkpoint"))
    };
    let header = line(0)?;
    if header != format!("{MAGIC} {VERSION}") {
        return Err(Error::parse(origin, 1, format!("unsupported checkpoint header {header:?}")));
    }
    let kind: ChannelKind = line(1)?
        .strip_prefix("kind ")
        .ok_or_else(|| Error::parse(origin, 2, "expected `kind` line"))?
        .parse()
        .map_err(|e: Error| Error::parse(origin, 2, e.to_string()))?;

    let mut dims = DimensionsConfig::new(1, 1, 1);
    for (k, v) in key_values(line(2)?, "dims", origin, 3)? {
        match k {
            "d_entity" => dims.d_entity = num(v, origin, 3)?,
            "d_attr" => dims.d_attr = num(v, origin, 3)?,
            "d_value" => dims.d_value = num(v, origin, 3)?,
            "d_init" => dims.d_init = num(v, origin, 3)?,
            "d_relation" => dims.d_relation = num(v, origin, 3)?,
            "hidden" => {
                dims.hidden = v.split(',').map(|h| num(h, origin, 3)).collect::<Result<_>>()?;
            }
            other => return Err(Error::parse(origin, 3, format!("unknown dimension {other:?}"))),
        }
    }
    let mut options = NetOptions::default();
    for (k, v) in key_values(line(3)?, "options", origin, 4)? {
        match k {
            "combine" => {
                options.relation_combine = match v {
                    "sum" => RelationCombine::Sum,
                    "concat" => RelationCombine::Concat,
                    _ => return Err(Error::parse(origin, 4, format!("unknown combine mode {v:?}"))),
                }
            }
            "rgat" => options.rgat = num(v, origin, 4)?,
            "leaky_slope" => options.leaky_slope = num(v, origin, 4)?,
            other => return Err(Error::parse(origin, 4, format!("unknown option {other:?}"))),
        }
    }
    let counts: Vec<usize> = line(4)?
        .strip_prefix("entities ")
        .ok_or_else(|| Error::parse(origin, 5, "expected `entities` line"))?
        .split_whitespace()
        .map(|s| num(s, origin, 5))
        .collect::<Result<_>>()?;
    if counts.len() != 2 {
        return Err(Error::parse(origin, 5, "expected source and target entity counts"));
    }
    let mut model = ChannelModel::new(kind, dims, options, counts[0], counts[1], 0)?;

    let mut i = 5;
    let mut loaded = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let parts: Vec<&str> = lines[i].split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "param" {
            return Err(Error::parse(origin, i + 1, "expected `param name rows cols`"));
        }
        let id = model
            .store
            .find(parts[1])
            .ok_or_else(|| Error::parse(origin, i + 1, format!("unexpected parameter {:?}", parts[1])))?;
        let rows: usize = num(parts[2], origin, i + 1)?;
        let cols: usize = num(parts[3], origin, i + 1)?;
        let target = &mut model.store.get_mut(id).value;
        if target.shape() != (rows, cols) {
            return Err(Error::parse(
                origin,
                i + 1,
                format!("parameter {} is {rows}x{cols}, model expects {:?}", parts[1], target.shape()),
            ));
        }
        let values: Vec<f64> = line(i + 1)?
            .split_whitespace()
            .map(|s| num(s, origin, i + 2))
            .collect::<Result<_>>()?;
        if values.len() != rows * cols {
            return Err(Error::parse(origin, i + 2, format!("expected {} values, found {}", rows * cols, values.len())));
        }
        target.data_mut().copy_from_slice(&values);
        loaded += 1;
        i += 2;
    }
    if loaded != model.store.len() {
        return Err(Error::parse(
            origin,
            lines.len(),
            format!("checkpoint has {loaded} of {} parameters", model.store.len()),
        ));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let m = ChannelModel::new(ChannelKind::Literal, DimensionsConfig::new(4, 6, 2), NetOptions::default(), 0, 0, 7).unwrap();
        let back = read(to_text(&m).as_bytes(), "mem").unwrap();
        assert_eq!(back, m);
        let s = ChannelModel::new(ChannelKind::Structure, DimensionsConfig::new(3, 5, 1), NetOptions { rgat: false, ..Default::default() }, 4, 5, 1).unwrap();
        assert_eq!(read(to_text(&s).as_bytes(), "mem").unwrap(), s);
    }

    #[test]
    fn rejects_wrong_version() {
        let m = ChannelModel::new(ChannelKind::Name, DimensionsConfig::new(2, 2, 1), NetOptions::default(), 0, 0, 0).unwrap();
        let text = to_text(&m).replacen("raea-checkpoint 1", "raea-checkpoint 9", 1);
        assert!(read(text.as_bytes(), "mem").is_err());
    }
}
