use super::CliError;

pub const CURVE_HEADER: [&str; 6] = ["k", "bound", "q05", "q50", "q95", "max"];

/// One row of a curve table; absent cells are written empty.
#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub k: usize,
    pub bound: Option<f64>,
    /// Quantiles `q05, q50, q95, max` of `‖x_k − x*‖²`.
    pub q: [Option<f64>; 4],
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn write_curve_table(rows: impl Iterator<Item = TableRow>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let cell = |v: Option<f64>| v.map(format_value).unwrap_or_default();
    w.write_record(CURVE_HEADER).expect("in-memory write");
    for r in rows {
        let mut rec = vec![r.k.to_string(), cell(r.bound)];
        rec.extend(r.q.iter().map(|&v| cell(v)));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

/// Parses a table written with [`CURVE_HEADER`].
pub fn parse_curve_table(text: &str) -> Result<Vec<TableRow>, CliError> {
    let bad = |m: String| CliError::Schema(format!("curve table: {m}"));
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| bad(e.to_string()))?;
    if header.iter().ne(CURVE_HEADER) {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let cell = |s: &str| -> Result<Option<f64>, CliError> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| bad(format!("not a number: {s:?}")))
        }
    };
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let k = rec[0].parse().map_err(|_| bad(format!("bad step {:?}", &rec[0])))?;
            Ok(TableRow { k, bound: cell(&rec[1])?, q: [cell(&rec[2])?, cell(&rec[3])?, cell(&rec[4])?, cell(&rec[5])?] })
        })
        .collect()
}
