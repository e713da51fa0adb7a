use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use histocad_slidekit::{
    parse_ratios, read_manifest, split_patients, tile_region, write_tile_dir, Roi, DEFAULT_TILE_SIZE,
};
use rayon::prelude::*;
use serde_json::json;

#[derive(Parser)]
#[command(name = "slidekit", about = "Tile slides and split cohorts by patient")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cut every slide of a manifest into `<out>/<slide_id>/r<row>_c<col>.png`.
    Tile {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TILE_SIZE)]
        tile_size: u32,
    },
    /// Patient-level stratified split, printed as JSON.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "0.678,0.108,0.214")]
        ratios: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Tile { manifest, out, tile_size } => {
            let slides = read_manifest(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
            slides.par_iter().try_for_each(|slide| -> Result<()> {
                let grid = tile_region(slide, Roi::whole(slide), tile_size)?;
                let dir = out.join(&slide.slide_id);
                write_tile_dir(&grid, &dir)?;
                let summary = json!({
                    "slide_id": slide.slide_id,
                    "rows": grid.rows,
                    "cols": grid.cols,
                    "tile_size": grid.tile_size,
                    "pad_fraction": grid.tiles.iter().map(|t| t.pad_fraction).collect::<Vec<_>>(),
                });
                fs::write(dir.join("grid.json"), serde_json::to_string_pretty(&summary)?)?;
                println!("{}: {} x {} tiles", slide.slide_id, grid.rows, grid.cols);
                Ok(())
            })?;
        }
        Command::Split { manifest, ratios, seed, out } => {
            let slides = read_manifest(&manifest)?;
            let split = split_patients(&slides, parse_ratios(&ratios)?, seed)?;
            let text = serde_json::to_string_pretty(&split)?;
            match out {
                Some(path) => fs::write(path, text)?,
                None => println!("{text}"),
            }
        }
    }
    Ok(())
}
