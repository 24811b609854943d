use std::fmt::Write as _;

/// Square labelled matrix as CSV: a header row of labels, then one row per
/// label. Undefined cells are written as `NA`.
pub(crate) fn square_csv(
    corner: &str,
    labels: &[String],
    cell: impl Fn(usize, usize) -> Option<f64>,
) -> String {
    let mut out = String::new();
    out.push_str(&quote(corner));
    for l in labels {
        out.push(',');
        out.push_str(&quote(l));
    }
    out.push('\n');
    for (i, l) in labels.iter().enumerate() {
        out.push_str(&quote(l));
        for j in 0..labels.len() {
            match cell(i, j) {
                Some(v) => write!(out, ",{v}").expect("write to String"),
                None => out.push_str(",NA"),
            }
        }
        out.push('\n');
    }
    out
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}
