#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BASIS: &str = "k,x_type,y_type,value\nsame,a,p,1\nsame,b,q,1\ncross,a,q,1\ncross,b,p,0.5\n";
pub const LAMBDA: &str = "k,value\nsame,0.7\ncross,-0.3\n";
pub const MARGINS: &str = "side,type,mass\nx,a,1\nx,b,1.5\ny,p,1.2\ny,q,0.8\n";

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_matchtu")
}

pub fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

pub fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

pub fn run_config(cmd: &str, config: &Path, extra: &[&str]) -> Output {
    let c = config.to_str().unwrap();
    let mut args = vec![cmd, "--config", c];
    args.extend_from_slice(extra);
    run(&args)
}

pub fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

/// Value column of a counts-layout CSV.
pub fn values(path: &Path) -> Vec<f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect()
}

/// Numeric body of a matrix CSV.
pub fn matrix(path: &Path) -> Vec<f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .flat_map(|l| l.split(',').skip(1).map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .collect()
}

/// `(estimate, std_error)` by parameter name from an estimates table.
pub fn estimates(path: &Path) -> Vec<(String, f64, Option<f64>)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[2].parse().unwrap(), f[3].parse().ok())
        })
        .collect()
}
