use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use super::SpecError;

/// Highest core count addressable by a resource key: slot indices are
/// written as single decimal digits.
pub const MAX_CORES: u32 = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GpuSpec {
    pub arch: String,
    pub api: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceSpec {
    pub name: String,
    pub cpu_arch: String,
    pub cores: u32,
    pub gpu: Option<GpuSpec>,
}

impl DeviceSpec {
    /// Lower-cased CPU architecture, as it appears in resource keys.
    pub fn arch_tag(&self) -> String {
        self.cpu_arch.to_ascii_lowercase()
    }
}

impl fmt::Display for DeviceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} cpu={} slots=0-{}", self.name, self.cpu_arch, self.cores - 1)?;
        if let Some(gpu) = &self.gpu {
            write!(f, " gpu={} api={}", gpu.arch, gpu.api)?;
        }
        Ok(())
    }
}

/// Ordered list of devices available for deployment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlatformSpec {
    pub devices: Vec<DeviceSpec>,
}

impl PlatformSpec {
    pub fn device(&self, name: &str) -> Option<&DeviceSpec> {
        self.devices.iter().find(|d| d.name == name)
    }

    pub fn parse(text: &str) -> Result<PlatformSpec, SpecError> {
        let mut devices: Vec<DeviceSpec> = Vec::new();
        let mut seen = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let dev = parse_device_line(line).map_err(|msg| SpecError::Parse {
                line: line_no,
                msg,
            })?;
            if !seen.insert(dev.name.clone()) {
                return Err(SpecError::DuplicateDevice(dev.name));
            }
            devices.push(dev);
        }
        if devices.is_empty() {
            return Err(SpecError::Parse {
                line: 0,
                msg: "no devices".into(),
            });
        }
        Ok(PlatformSpec { devices })
    }

    pub fn format(&self) -> String {
        let mut out = String::new();
        for d in &self.devices {
            out.push_str(&d.to_string());
            out.push('\n');
        }
        out
    }
}

/// Reads a platform file: one `name cpu=<arch> slots=<a>-<b> [gpu=<arch> api=<api>]`
/// device per line, `#` starts a comment.
pub fn parse_platform(path: &Path) -> Result<PlatformSpec, SpecError> {
    let text = fs::read_to_string(path).map_err(|e| SpecError::io(path, e))?;
    PlatformSpec::parse(&text)
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '.')
}

fn parse_device_line(line: &str) -> Result<DeviceSpec, String> {
    let mut tokens = line.split_whitespace();
    let name = tokens.next().unwrap().to_string();
    if !is_ident(&name) {
        return Err(format!(
            "device name {name:?} may only contain letters, digits, '-' and '.'"
        ));
    }
    let (mut cpu, mut slots, mut gpu, mut api) = (None, None, None, None);
    for tok in tokens {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got {tok:?}"))?;
        let slot = match key {
            "cpu" => &mut cpu,
            "slots" => &mut slots,
            "gpu" => &mut gpu,
            "api" => &mut api,
            other => return Err(format!("unknown field {other:?}")),
        };
        if value.is_empty() {
            return Err(format!("field {key} is empty"));
        }
        if slot.replace(value.to_string()).is_some() {
            return Err(format!("field {key} given twice"));
        }
    }
    let cpu_arch = cpu.ok_or("missing cpu=<arch>")?;
    if !cpu_arch.chars().all(|c| c.is_ascii_alphabetic()) {
        return Err(format!("cpu architecture {cpu_arch:?} must be alphabetic"));
    }
    if cpu_arch.eq_ignore_ascii_case("gpu") {
        return Err("cpu architecture may not be named gpu".into());
    }
    let slots = slots.ok_or("missing slots=<a>-<b>")?;
    let (lo, hi) = slots
        .split_once('-')
        .ok_or_else(|| format!("slots must be a range a-b, got {slots:?}"))?;
    let lo: u32 = lo.parse().map_err(|_| format!("bad slot index {lo:?}"))?;
    let hi: u32 = hi.parse().map_err(|_| format!("bad slot index {hi:?}"))?;
    if lo != 0 || hi < lo {
        return Err(format!("slot range must start at 0 and be non-empty, got {slots}"));
    }
    let cores = hi + 1;
    if cores > MAX_CORES {
        return Err(format!(
            "{cores} cores exceed the addressable maximum of {MAX_CORES} (single-digit slot indices)"
        ));
    }
    let gpu = match (gpu, api) {
        (Some(arch), Some(api)) => Some(GpuSpec { arch, api }),
        (None, None) => None,
        _ => return Err("gpu=<arch> and api=<api> must be given together".into()),
    };
    Ok(DeviceSpec {
        name,
        cpu_arch,
        cores,
        gpu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn device_with_gpu() {
        let p = PlatformSpec::parse("edge01 cpu=ARM slots=0-5 gpu=NVIDIAVolta api=CUDA\n").unwrap();
        let d = &p.devices[0];
        assert_eq!(d.name, "edge01");
        assert_eq!(d.cores, 6);
        assert_eq!(
            d.gpu,
            Some(GpuSpec {
                arch: "NVIDIAVolta".into(),
                api: "CUDA".into()
            })
        );
    }

    #[test]
    fn device_without_gpu() {
        let p = PlatformSpec::parse("# fleet\nedge04 cpu=ARM slots=0-5 # no gpu\n").unwrap();
        assert_eq!(p.devices[0].gpu, None);
        assert_eq!(p.devices[0].cores, 6);
    }

    #[test]
    fn empty_file_has_no_devices() {
        match PlatformSpec::parse("\n# only comments\n") {
            Err(SpecError::Parse { msg, .. }) => assert_eq!(msg, "no devices"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        match PlatformSpec::parse("edge01 cpu=ARM slots=0-5\n\nedge02 cpu=ARM slots=five\n") {
            Err(SpecError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_device() {
        let err = PlatformSpec::parse("a cpu=ARM slots=0-1\na cpu=ARM slots=0-1\n").unwrap_err();
        assert!(matches!(err, SpecError::DuplicateDevice(n) if n == "a"));
    }

    #[test]
    fn gpu_needs_api() {
        assert!(PlatformSpec::parse("a cpu=ARM slots=0-1 gpu=Volta\n").is_err());
    }

    #[test]
    fn too_many_cores() {
        assert!(PlatformSpec::parse("a cpu=ARM slots=0-10\n").is_err());
        assert!(PlatformSpec::parse("a cpu=ARM slots=0-9\n").is_ok());
    }

    #[test]
    fn format_parses_back() {
        let text = "edge01 cpu=ARM slots=0-5 gpu=NVIDIAVolta api=CUDA\nedge04 cpu=ARM slots=0-3\n";
        let p = PlatformSpec::parse(text).unwrap();
        assert_eq!(p.format(), text);
    }
}
