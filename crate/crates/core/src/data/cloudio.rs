use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::scalar::Real;

/// Writes one point per line, `x y z [r g b] [label]`, after a header
/// `# fields: x y z r g b label; count: N`. Floats carry 17 significant
/// digits so `f64` values survive a round trip exactly.
pub fn write_cloud<T: Real, W: Write>(cloud: &PointCloud<T>, mut w: W) -> Result<()> {
    cloud.validate()?;
    let mut fields = vec!["x", "y", "z"];
    if cloud.colors.is_some() {
        fields.extend(["r", "g", "b"]);
    }
    if cloud.labels.is_some() {
        fields.push("label");
    }
    writeln!(w, "# fields: {}; count: {}", fields.join(" "), cloud.len())?;
    let mut line = String::new();
    for i in 0..cloud.len() {
        line.clear();
        let mut push = |x: T| {
            if !line.is_empty() {
                line.push(' ');
            }
            line.push_str(&format!("{:.16e}", x.as_f64()));
        };
        cloud.positions[i].iter().for_each(|&x| push(x));
        if let Some(c) = &cloud.colors {
            c[i].iter().for_each(|&x| push(x));
        }
        if let Some(l) = &cloud.labels {
            line.push_str(&format!(" {}", l[i]));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cloud<T: Real, R: BufRead>(r: R) -> Result<PointCloud<T>> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::Parse {
        line: 1,
        msg: "missing header".into(),
    })??;
    let (fields, count) = parse_header(&header)?;
    let has_colors = fields.iter().any(|f| f == "r");
    let has_labels = fields.iter().any(|f| f == "label");
    let mut positions = Vec::with_capacity(count);
    let mut colors = has_colors.then(|| Vec::with_capacity(count));
    let mut labels = has_labels.then(|| Vec::with_capacity(count));
    let mut body = 0usize;
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        body += 1;
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != fields.len() {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {} columns, found {}", fields.len(), tok.len()),
            });
        }
        let num = |k: usize| -> Result<T> {
            tok[k].parse::<f64>().map(T::lit).map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("column {} ({:?}): {e}", fields[k], tok[k]),
            })
        };
        positions.push([num(0)?, num(1)?, num(2)?]);
        if let Some(c) = colors.as_mut() {
            c.push([num(3)?, num(4)?, num(5)?]);
        }
        if let Some(l) = labels.as_mut() {
            let k = fields.len() - 1;
            l.push(tok[k].parse::<usize>().map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("label {:?}: {e}", tok[k]),
            })?);
        }
    }
    if body != count {
        return Err(Error::Parse {
            line: 1,
            msg: format!("header declares {count} points, body has {body}"),
        });
    }
    let cloud = PointCloud {
        positions,
        colors,
        labels,
        features: None,
    };
    cloud.validate()?;
    Ok(cloud)
}

fn parse_header(header: &str) -> Result<(Vec<String>, usize)> {
    let bad = |msg: String| Error::Parse { line: 1, msg };
    let rest = header
        .strip_prefix('#')
        .ok_or_else(|| bad(format!("header must start with '#', got {header:?}")))?;
    let mut fields = None;
    let mut count = None;
    for part in rest.split(';') {
        let part = part.trim();
        if let Some(f) = part.strip_prefix("fields:") {
            fields = Some(f.split_whitespace().map(str::to_string).collect::<Vec<_>>());
        } else if let Some(c) = part.strip_prefix("count:") {
            count = Some(
                c.trim()
                    .parse::<usize>()
                    .map_err(|e| bad(format!("count {:?}: {e}", c.trim())))?,
            );
        } else if !part.is_empty() {
            return Err(bad(format!("unknown header entry {part:?}")));
        }
    }
    let fields = fields.ok_or_else(|| bad("header lacks 'fields:'".into()))?;
    let count = count.ok_or_else(|| bad("header lacks 'count:'".into()))?;
    let allowed: [&[&str]; 4] = [
        &["x", "y", "z"],
        &["x", "y", "z", "label"],
        &["x", "y", "z", "r", "g", "b"],
        &["x", "y", "z", "r", "g", "b", "label"],
    ];
    if !allowed.iter().any(|a| a.iter().copied().eq(fields.iter().map(String::as_str))) {
        return Err(bad(format!("unsupported field list {fields:?}")));
    }
    Ok((fields, count))
}

pub fn write_cloud_file<T: Real>(cloud: &PointCloud<T>, path: impl AsRef<Path>) -> Result<()> {
    write_cloud(cloud, BufWriter::new(File::create(path)?))
}

pub fn read_cloud_file<T: Real>(path: impl AsRef<Path>) -> Result<PointCloud<T>> {
    read_cloud(BufReader::new(File::open(path)?))
}
