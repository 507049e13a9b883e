//! Gnuplot scripts for the standard figures. Scripts read the CSV files
//! directly; `#` lines are comments to gnuplot.

use std::fmt::Write as _;
use std::path::Path;

fn header(title: &str, png: &str) -> String {
    format!(
        "set datafile separator ','\nset key autotitle columnhead\nset terminal pngcairo size 900,600\nset output '{png}'\nset title '{title}'\n"
    )
}

fn column(columns: &[&str], name: &str) -> usize {
    columns.iter().position(|c| *c == name).map(|k| k + 1).unwrap_or(1)
}

/// Energy against time.
pub fn energy_vs_time(csv: &Path, columns: &[&str]) -> String {
    let mut s = header("E(t)", "energy_vs_time.png");
    let _ = writeln!(s, "set xlabel 't'\nset ylabel 'E'");
    let _ = writeln!(
        s,
        "plot '{}' using {}:{} with lines",
        csv.display(),
        column(columns, "t"),
        column(columns, "energy")
    );
    s
}

/// `log(E - E_∞)` against `√t`; an exponential-in-`√t` decay is a line.
pub fn decay_vs_sqrt_t(csv: &Path, columns: &[&str], e_inf: f64) -> String {
    let mut s = header("log(E - E_inf) vs sqrt(t)", "decay_vs_sqrt_t.png");
    let _ = writeln!(s, "set xlabel 'sqrt(t)'\nset ylabel 'log(E - E_inf)'");
    let _ = writeln!(
        s,
        "plot '{}' using (sqrt(${})):(log(${} - {e_inf:.17e})) with lines",
        csv.display(),
        column(columns, "t"),
        column(columns, "energy")
    );
    s
}

/// The Lojasiewicz ratios against time.
pub fn ratios_vs_time(csv: &Path, columns: &[&str]) -> String {
    let mut s = header("Lojasiewicz ratios", "ratios_vs_time.png");
    let _ = writeln!(s, "set xlabel 't'\nset logscale y");
    let t = column(columns, "t");
    let _ = writeln!(
        s,
        "plot '{0}' using {1}:{2} with lines, '{0}' using {1}:{3} with lines",
        csv.display(),
        t,
        column(columns, "ratio_scale"),
        column(columns, "ratio_energy")
    );
    s
}

/// `log gap` against `log λ` for a bubble scan.
pub fn gap_vs_lambda(csv: &Path, columns: &[&str]) -> String {
    let mut s = header("E(z) - 4 pi", "gap_vs_lambda.png");
    let _ = writeln!(s, "set xlabel 'lambda'\nset ylabel 'gap'\nset logscale xy");
    let _ = writeln!(
        s,
        "plot '{}' using {}:{} with linespoints, 8*pi**2/x**2 title '8 pi^2 lambda^-2'",
        csv.display(),
        column(columns, "lambda"),
        column(columns, "gap")
    );
    s
}
