//! Interpolator job files in the classic sectioned INI layout.

use ini::Ini;

use super::kernel::{Footprint, KernelKind, KernelSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct InterpolatorJob {
    pub casefile: String,
    pub kernel: KernelSpec,
    pub footprint: Footprint,
    pub cells: [u32; 3],
    pub origin: [f64; 3],
    pub extent: [f64; 3],
    pub fields: Vec<String>,
    pub output_npy: bool,
    pub output_path: String,
    pub index: u32,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(format!("ini: {}", msg.into()))
}

fn get<'a>(ini: &'a Ini, sec: &str, key: &str) -> Result<&'a str> {
    ini.section(Some(sec)).and_then(|s| s.get(key)).ok_or_else(|| bad(format!("missing [{sec}] {key}")))
}

fn num<T: std::str::FromStr>(ini: &Ini, sec: &str, key: &str) -> Result<T> {
    let s = get(ini, sec, key)?;
    s.trim().parse().map_err(|_| bad(format!("[{sec}] {key} = '{s}' is not a number")))
}

fn opt_num<T: std::str::FromStr>(ini: &Ini, sec: &str, key: &str) -> Result<Option<T>> {
    match ini.section(Some(sec)).and_then(|s| s.get(key)) {
        None => Ok(None),
        Some(_) => num(ini, sec, key).map(Some),
    }
}

impl InterpolatorJob {
    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| bad(e.to_string()))?;
        let kname = get(&ini, "interpolation", "kernel")?;
        let kind = KernelKind::from_ini_name(kname).ok_or_else(|| bad(format!("unknown kernel '{kname}'")))?;
        let sec = kind.ini_name();
        let d = KernelSpec::of(kind);
        let mut ecc = d.eccentricity;
        if let Some(s) = ini.section(Some(sec)).and_then(|s| s.get("eccentricity")) {
            let v: Vec<f64> = s
                .split(',')
                .map(|x| x.trim().parse().map_err(|_| bad(format!("eccentricity '{s}'"))))
                .collect::<Result<_>>()?;
            ecc = v.try_into().map_err(|_| bad("eccentricity needs three values"))?;
        }
        let kernel = KernelSpec {
            kind,
            sharpness: opt_num(&ini, sec, "sharpness")?.unwrap_or(d.sharpness),
            power: opt_num(&ini, sec, "power")?.unwrap_or(d.power),
            eps: opt_num(&ini, sec, "eps")?.unwrap_or(d.eps),
            eccentricity: ecc,
        };
        kernel.validate().map_err(bad)?;
        let footprint = match ini.section(Some(sec)).and_then(|s| s.get("kernel_footprint")).unwrap_or("N Closest").trim() {
            f if f.eq_ignore_ascii_case("n closest") => {
                let k: usize = num(&ini, sec, "num_neighbours")?;
                if k == 0 {
                    return Err(bad("num_neighbours must be >= 1"));
                }
                Footprint::NClosest(k)
            }
            f if f.eq_ignore_ascii_case("radius") => {
                let r: f64 = num(&ini, sec, "radius")?;
                if !(r >= 0.0) {
                    return Err(bad("radius must be >= 0"));
                }
                Footprint::Radius(r)
            }
            f => return Err(bad(format!("unknown kernel_footprint '{f}'"))),
        };
        let axes = ["x", "y", "z"];
        let mut cells = [0u32; 3];
        let mut origin = [0.0; 3];
        let mut extent = [0.0; 3];
        for k in 0..3 {
            cells[k] = num(&ini, "gridsize", &format!("num_cells_{}", axes[k]))?;
            origin[k] = num(&ini, "gridsize", &format!("origin_{}", axes[k]))?;
            extent[k] = num(&ini, "gridsize", &format!("scale_{}", axes[k]))?;
        }
        let nf: usize = num(&ini, "output", "num_fields")?;
        let fields = (1..=nf).map(|i| get(&ini, "output", &format!("field_{i}")).map(str::to_string)).collect::<Result<_>>()?;
        Ok(InterpolatorJob {
            casefile: ini.section(Some("reader")).and_then(|s| s.get("casefile_name")).unwrap_or("").to_string(),
            kernel,
            footprint,
            cells,
            origin,
            extent,
            fields,
            output_npy: opt_num::<u8>(&ini, "output", "output_npy")?.unwrap_or(1) != 0,
            output_path: ini.section(Some("output")).and_then(|s| s.get("global_output_path")).unwrap_or(".").to_string(),
            index: opt_num(&ini, "output", "index")?.unwrap_or(0),
        })
    }

    pub fn render(&self) -> String {
        let mut ini = Ini::new();
        ini.with_section(Some("reader")).set("casefile_name", self.casefile.as_str());
        ini.with_section(Some("interpolation")).set("kernel", self.kernel.kind.ini_name());
        let k = &self.kernel;
        let ecc = format!("{},{},{}", k.eccentricity[0], k.eccentricity[1], k.eccentricity[2]);
        let mut sec = ini.with_section(Some(k.kind.ini_name()));
        match self.footprint {
            Footprint::NClosest(n) => sec.set("kernel_footprint", "N Closest").set("num_neighbours", n.to_string()),
            Footprint::Radius(r) => sec.set("kernel_footprint", "Radius").set("radius", r.to_string()),
        };
        sec.set("sharpness", k.sharpness.to_string())
            .set("power", k.power.to_string())
            .set("eps", k.eps.to_string())
            .set("eccentricity", ecc);
        let axes = ["x", "y", "z"];
        let mut g = ini.with_section(Some("gridsize"));
        g.set("refinement_mode", "Use resolution");
        for i in 0..3 {
            g.set(format!("num_cells_{}", axes[i]), self.cells[i].to_string());
        }
        g.set("manual_bounding_box_selection", "1");
        for i in 0..3 {
            g.set(format!("origin_{}", axes[i]), self.origin[i].to_string());
        }
        for i in 0..3 {
            g.set(format!("scale_{}", axes[i]), self.extent[i].to_string());
        }
        let mut o = ini.with_section(Some("output"));
        o.set("num_fields", self.fields.len().to_string());
        for (i, f) in self.fields.iter().enumerate() {
            o.set(format!("field_{}", i + 1), f.as_str());
        }
        o.set("output_npy", (self.output_npy as u8).to_string())
            .set("output_vtk", "0")
            .set("output_csv", "0")
            .set("global_output_path", self.output_path.as_str())
            .set("index", self.index.to_string());
        let mut buf = Vec::new();
        ini.write_to(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("ini is utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXCERPT: &str = "
[reader]
casefile_name = case.vtu

[interpolation]
kernel = Linear_Kernel

[Linear_Kernel]
kernel_footprint = N Closest
num_neighbours = 6
# (radius unused for N Closest)

[gridsize]
refinement_mode = Use resolution
num_cells_x = 255          # -> 256 samples in X
num_cells_y = 63           # -> 64  samples in Y
num_cells_z = 63           # -> 64  samples in Z
manual_bounding_box_selection = 1
origin_x = 0
origin_y = 0
origin_z = 0
scale_x  = 2048            # lattice units
scale_y  = 512
scale_z  = 512

[output]
num_fields = 3
field_1 = velocity_x
field_2 = velocity_y
field_3 = velocity_z
output_npy = 1
output_vtk = 0
output_csv = 0
global_output_path = out
index = 0
";

    #[test]
    fn reads_reference_excerpt() {
        let j = InterpolatorJob::parse(EXCERPT).unwrap();
        assert_eq!(j.kernel.kind, KernelKind::Linear);
        assert_eq!(j.footprint, Footprint::NClosest(6));
        assert_eq!(j.cells, [255, 63, 63]);
        assert_eq!(j.extent, [2048.0, 512.0, 512.0]);
        assert_eq!(j.fields, ["velocity_x", "velocity_y", "velocity_z"]);
        assert!(j.output_npy);
        let g = crate::resample::make_target_grid(j.origin, j.extent, j.cells).unwrap();
        assert_eq!(g.dims, [256, 64, 64]);
    }

    #[test]
    fn round_trip() {
        let mut j = InterpolatorJob::parse(EXCERPT).unwrap();
        j.kernel = KernelSpec { eccentricity: [2.0, 1.0, 0.5], ..KernelSpec::of(KernelKind::EllipsoidalGaussian) };
        j.footprint = Footprint::Radius(12.5);
        assert_eq!(InterpolatorJob::parse(&j.render()).unwrap(), j);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(InterpolatorJob::parse(&EXCERPT.replace("Linear_Kernel\n", "Cubic_Kernel\n")).is_err());
        assert!(InterpolatorJob::parse(&EXCERPT.replace("num_neighbours = 6", "num_neighbours = 0")).is_err());
        assert!(InterpolatorJob::parse(&EXCERPT.replace("num_cells_y = 63", "num_cells_y = a")).is_err());
    }
}
