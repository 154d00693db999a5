//! Table emission: long-format CSV, the paper-style aligned Markdown, and
//! JSON.

use super::MetricsRow;

/// Long format, full float precision so identical runs produce identical
/// bytes.
pub fn rows_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("method,coefficient,bias,ssd,ese,cp,re\n");
    for row in rows {
        for c in &row.coef {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                row.method, c.name, c.bias, c.ssd, c.ese, c.cp, c.re
            ));
        }
    }
    out
}

/// Aligned Markdown grouped per coefficient, three decimals like the
/// reference tables.
pub fn rows_to_markdown(rows: &[MetricsRow]) -> String {
    let mut out = String::new();
    let coef_names: Vec<&str> = rows
        .first()
        .map(|r| r.coef.iter().map(|c| c.name.as_str()).collect())
        .unwrap_or_default();
    let width = rows
        .iter()
        .map(|r| r.method.len())
        .chain(["Method".len()])
        .max()
        .unwrap_or(6);
    for (j, name) in coef_names.iter().enumerate() {
        out.push_str(&format!("### {name}\n\n"));
        out.push_str(&format!(
            "| {:w$} |   Bias |   SSD |   ESE |    CP |    RE |\n",
            "Method",
            w = width
        ));
        out.push_str(&format!(
            "|{:-<w$}|--------|-------|-------|-------|-------|\n",
            "",
            w = width + 2
        ));
        for row in rows {
            let c = &row.coef[j];
            out.push_str(&format!(
                "| {:w$} | {:6.3} | {:5.3} | {:5.3} | {:5.3} | {:5.3} |\n",
                row.method,
                c.bias,
                c.ssd,
                c.ese,
                c.cp,
                c.re,
                w = width
            ));
        }
        out.push('\n');
    }
    out
}

pub fn rows_to_json(rows: &[MetricsRow]) -> String {
    let mut out = serde_json::to_string_pretty(rows).expect("metrics serialize");
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::CoefMetrics;

    fn sample_rows() -> Vec<MetricsRow> {
        vec![
            MetricsRow {
                method: "original".into(),
                coef: vec![CoefMetrics {
                    name: "theta".into(),
                    bias: 0.001,
                    ssd: 0.035,
                    ese: 0.0351,
                    cp: 0.956,
                    re: 1.0,
                }],
            },
            MetricsRow {
                method: "optimal".into(),
                coef: vec![CoefMetrics {
                    name: "theta".into(),
                    bias: -0.002,
                    ssd: 0.027,
                    ese: 0.028,
                    cp: 0.948,
                    re: 1.68,
                }],
            },
        ]
    }

    #[test]
    fn csv_round_trips_floats_exactly() {
        let rows = sample_rows();
        let csv = rows_to_csv(&rows);
        let line = csv.lines().nth(2).unwrap();
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[0], "optimal");
        assert_eq!(fields[2].parse::<f64>().unwrap(), -0.002);
        assert_eq!(fields[6].parse::<f64>().unwrap(), 1.68);
    }

    #[test]
    fn markdown_has_a_block_per_coefficient() {
        let md = rows_to_markdown(&sample_rows());
        assert!(md.contains("### theta"));
        assert!(md.contains("| original"));
        assert!(md.contains("| optimal"));
    }

    #[test]
    fn json_parses_back() {
        let json = rows_to_json(&sample_rows());
        let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed[0]["method"], "original");
        assert_eq!(parsed[1]["coef"][0]["re"], 1.68);
    }
}
