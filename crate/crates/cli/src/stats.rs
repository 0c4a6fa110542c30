use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;
use serde_json::{json, Value};

use scenic_core::strategy::BloomLevel;
use scenic_stats::fixtures::{
    table3_higher_lower, table3_labels, ENGAGEMENT_BENCHMARK, ENGAGEMENT_D_REPORTED,
    ENGAGEMENT_MEAN, ENGAGEMENT_SD, TABLE5_PARENT, TABLE5_SCENIC,
};
use scenic_stats::{
    bloom_table, chi_square, cohens_d_from_summary, describe, kruskal_wallis, mann_whitney_u,
    paired_t, BloomTable, ContingencyTable, StatResult,
};

use crate::{input, runtime, CliError};

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Bloom distribution of the built-in prompt study and its chi-square tests.
    #[arg(long)]
    pub paper_table3: bool,
    /// Landmark recall of the built-in study: M/SD per group and Mann-Whitney U.
    #[arg(long)]
    pub paper_table5: bool,
    /// Cohen's d against a benchmark; defaults to the built-in engagement summary.
    #[arg(long)]
    pub effect_size: bool,
    #[arg(long, requires = "effect_size")]
    pub mean: Option<f64>,
    #[arg(long, requires = "effect_size")]
    pub sd: Option<f64>,
    #[arg(long, requires = "effect_size")]
    pub benchmark: Option<f64>,
    /// Contingency table (CSV with header row and row labels, or JSON).
    #[arg(long)]
    pub chi_square: Option<PathBuf>,
    /// Two samples for Mann-Whitney U (one number per line, or a JSON array).
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pub samples: Option<Vec<PathBuf>>,
    /// Paired observations: CSV with `pre,post` columns or JSON {pre, post}.
    #[arg(long)]
    pub paired: Option<PathBuf>,
    /// Labeled prompts: CSV with `condition,level` columns or a JSON array.
    #[arg(long)]
    pub bloom: Option<PathBuf>,
    /// Two or more samples for Kruskal-Wallis.
    #[arg(long, num_args = 2..)]
    pub kruskal: Option<Vec<PathBuf>>,
    /// Print JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

/// Two decimals, halves rounded away from zero.
fn fmt2(x: f64) -> String {
    format!("{:.2}", (x * 100.0).round() / 100.0)
}

fn fmt_p(p: f64) -> String {
    if p.is_nan() {
        "n/a".into()
    } else if p < 0.001 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

fn fmt_result(label: &str, r: &StatResult) -> String {
    let df = r.df.map(|d| format!("({d})")).unwrap_or_default();
    let mut s = format!("{label}: {}{df} = {}, p = {}, n = {}", r.method, fmt2(r.statistic), fmt_p(r.p), r.n);
    if let Some(note) = &r.note {
        s.push_str(&format!(" [{note}]"));
    }
    s
}

struct Report {
    lines: Vec<String>,
    json: Vec<(String, Value)>,
}

impl Report {
    fn result(&mut self, label: &str, r: &StatResult) {
        self.lines.push(fmt_result(label, r));
        self.json.push((label.to_string(), json!(r)));
    }

    fn line(&mut self, s: String) {
        self.lines.push(s);
    }

    fn value(&mut self, label: &str, v: Value) {
        self.json.push((label.to_string(), v));
    }
}

fn bloom_lines(report: &mut Report, table: &BloomTable) {
    let header: Vec<String> = BloomLevel::ALL.iter().map(|l| format!("{l:?}")).collect();
    report.line(format!("{:<10} {:>4}  {}  higher-order", "condition", "n", header.join("  ")));
    for row in &table.rows {
        let cells: Vec<String> = row
            .percents
            .iter()
            .zip(&header)
            .map(|(p, h)| format!("{:>w$.1}%", p, w = h.len() - 1))
            .collect();
        report.line(format!(
            "{:<10} {:>4}  {}  {:.1}%",
            row.condition,
            row.n,
            cells.join("  "),
            row.higher_order_pct
        ));
    }
    report.value("bloom", json!(table));
}

fn chi_square_family(report: &mut Report, table: &ContingencyTable) -> Result<(), CliError> {
    let all = chi_square(table).map_err(input)?;
    report.result(&table.cols.join(" vs "), &all);
    let k = table.cols.len();
    if k > 2 {
        for i in 0..k {
            for j in i + 1..k {
                let sub = table.select_cols(&[i, j]).map_err(input)?;
                let r = chi_square(&sub).map_err(input)?;
                report.result(&format!("{} vs {}", table.cols[i], table.cols[j]), &r);
            }
        }
    }
    Ok(())
}

fn two_samples(report: &mut Report, names: [&str; 2], a: &[f64], b: &[f64]) -> Result<(), CliError> {
    for (name, s) in names.iter().zip([a, b]) {
        let d = describe(s).map_err(input)?;
        report.line(format!("{name}: n = {}, M = {}, SD = {}", d.n, fmt2(d.mean), fmt2(d.sd)));
        report.value(&format!("describe {name}"), json!(d));
    }
    let u = mann_whitney_u(a, b).map_err(input)?;
    report.result(&format!("{} vs {}", names[0], names[1]), &u);
    Ok(())
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn bad(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {msg}", path.display()))
}

fn read_sample(path: &Path) -> Result<Vec<f64>, CliError> {
    let src = read(path)?;
    if is_json(path) {
        return serde_json::from_str(&src).map_err(|e| bad(path, e));
    }
    let mut out = Vec::new();
    for tok in src.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
        match tok.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if out.is_empty() => continue,
            Err(e) => return Err(bad(path, format!("{tok:?}: {e}"))),
        }
    }
    Ok(out)
}

fn read_table(path: &Path) -> Result<ContingencyTable, CliError> {
    let src = read(path)?;
    if is_json(path) {
        let t: ContingencyTable = serde_json::from_str(&src).map_err(|e| bad(path, e))?;
        return ContingencyTable::new(t.rows, t.cols, t.counts).map_err(|e| bad(path, e));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(src.as_bytes());
    let cols: Vec<String> = rdr.headers().map_err(|e| bad(path, e))?.iter().skip(1).map(String::from).collect();
    let (mut rows, mut counts) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(path, e))?;
        rows.push(rec.get(0).unwrap_or_default().to_string());
        let row = rec
            .iter()
            .skip(1)
            .map(|c| c.parse::<u64>().map_err(|e| bad(path, format!("{c:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        counts.push(row);
    }
    ContingencyTable::new(rows, cols, counts).map_err(|e| bad(path, e))
}

fn read_paired(path: &Path) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let src = read(path)?;
    if is_json(path) {
        #[derive(Deserialize)]
        struct Paired {
            pre: Vec<f64>,
            post: Vec<f64>,
        }
        let p: Paired = serde_json::from_str(&src).map_err(|e| bad(path, e))?;
        return Ok((p.pre, p.post));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(src.as_bytes());
    let (mut pre, mut post) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(path, e))?;
        let get = |i: usize| -> Result<f64, CliError> {
            let c = rec.get(i).ok_or_else(|| bad(path, "row needs pre and post"))?;
            c.parse().map_err(|e| bad(path, format!("{c:?}: {e}")))
        };
        pre.push(get(0)?);
        post.push(get(1)?);
    }
    Ok((pre, post))
}

fn read_bloom(path: &Path) -> Result<Vec<(String, BloomLevel)>, CliError> {
    let src = read(path)?;
    if is_json(path) {
        #[derive(Deserialize)]
        struct Labeled {
            condition: String,
            level: BloomLevel,
        }
        let v: Vec<Labeled> = serde_json::from_str(&src).map_err(|e| bad(path, e))?;
        return Ok(v.into_iter().map(|l| (l.condition, l.level)).collect());
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(src.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(path, e))?;
        let cond = rec.get(0).unwrap_or_default().to_string();
        let lvl = rec.get(1).unwrap_or_default();
        let level = BloomLevel::parse(lvl).ok_or_else(|| bad(path, format!("unknown level {lvl:?}")))?;
        out.push((cond, level));
    }
    Ok(out)
}

pub fn cmd_stats(a: &StatsArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut report = Report {
        lines: Vec::new(),
        json: Vec::new(),
    };
    let mut any = false;
    if a.paper_table3 {
        any = true;
        bloom_lines(&mut report, &bloom_table(&table3_labels()));
        chi_square_family(&mut report, &table3_higher_lower().map_err(runtime)?)?;
    }
    if a.paper_table5 {
        any = true;
        two_samples(&mut report, ["SCENIC", "Parent"], &TABLE5_SCENIC, &TABLE5_PARENT)?;
    }
    if a.effect_size {
        any = true;
        let mean = a.mean.unwrap_or(ENGAGEMENT_MEAN);
        let sd = a.sd.unwrap_or(ENGAGEMENT_SD);
        let bench = a.benchmark.unwrap_or(ENGAGEMENT_BENCHMARK);
        let d = cohens_d_from_summary(mean, sd, bench).map_err(input)?;
        report.line(format!("Cohen's d = {} (M = {mean}, SD = {sd}, benchmark = {bench})", fmt2(d.statistic)));
        if a.mean.is_none() && a.sd.is_none() && a.benchmark.is_none() {
            report.line(format!(
                "published value {ENGAGEMENT_D_REPORTED:.2}; the gap comes from rounded M and SD"
            ));
        }
        report.value("cohens_d", json!(d));
    }
    if let Some(p) = &a.chi_square {
        any = true;
        chi_square_family(&mut report, &read_table(p)?)?;
    }
    if let Some(files) = &a.samples {
        any = true;
        let (x, y) = (read_sample(&files[0])?, read_sample(&files[1])?);
        two_samples(&mut report, ["A", "B"], &x, &y)?;
    }
    if let Some(p) = &a.paired {
        any = true;
        let (pre, post) = read_paired(p)?;
        let r = paired_t(&pre, &post).map_err(input)?;
        report.result("pre vs post", &r);
    }
    if let Some(p) = &a.bloom {
        any = true;
        let table = bloom_table(&read_bloom(p)?);
        bloom_lines(&mut report, &table);
        if table.rows.len() >= 2 {
            chi_square_family(&mut report, &table.higher_lower().map_err(input)?)?;
        }
    }
    if let Some(files) = &a.kruskal {
        any = true;
        let groups = files.iter().map(|f| read_sample(f)).collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<&[f64]> = groups.iter().map(Vec::as_slice).collect();
        report.result("groups", &kruskal_wallis(&refs).map_err(input)?);
    }
    if !any {
        return Err(CliError::Input(
            "nothing to compute; pass --paper-table3, --paper-table5, --effect-size or an input file".into(),
        ));
    }
    if a.json {
        let obj: serde_json::Map<String, Value> = report.json.into_iter().collect();
        writeln!(out, "{}", serde_json::to_string_pretty(&obj).map_err(runtime)?).map_err(runtime)?;
    } else {
        for l in report.lines {
            writeln!(out, "{l}").map_err(runtime)?;
        }
    }
    Ok(())
}
