use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, to_json_string(value)?)?;
    Ok(())
}

/// Writes one CSV row per record; headers come from the record's field names.
pub fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Gnuplot-style data: `#` comment header, then whitespace-separated columns.
pub fn write_plot_data(path: &Path, title: &str, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    ensure_parent(path)?;
    let mut f = fs::File::create(path)?;
    writeln!(f, "# {title}")?;
    writeln!(f, "# {}", columns.join(" "))?;
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
        writeln!(f, "{}", line.join(" "))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        x: f64,
        y: f64,
    }

    #[test]
    fn writes_all_three_formats() {
        let dir = tempfile::tempdir().unwrap();
        let j = dir.path().join("a/summary.json");
        write_json(&j, &serde_json::json!({"v": 0.1})).unwrap();
        assert!(fs::read_to_string(&j).unwrap().ends_with("}\n"));

        let c = dir.path().join("curve.csv");
        write_csv(&c, &[Row { x: 1.0, y: 0.5 }, Row { x: 2.0, y: 0.25 }]).unwrap();
        assert_eq!(fs::read_to_string(&c).unwrap(), "x,y\n1.0,0.5\n2.0,0.25\n");

        let p = dir.path().join("curve.dat");
        write_plot_data(&p, "tail", &["x", "y"], &[vec![1.0, 0.5]]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# tail\n# x y\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
