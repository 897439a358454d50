//! Minimal flag parser: `--name value`, `--name=value` and boolean
//! switches. Unknown flags are usage errors so typos never pass silently.

use std::collections::{BTreeMap, BTreeSet};

use useanet_core::error::{Error, Result};

pub struct Args {
    values: BTreeMap<String, String>,
    switches: BTreeSet<String>,
}

impl Args {
    pub fn parse(
        raw: &[String],
        value_flags: &[&str],
        switch_flags: &[&str],
    ) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut switches = BTreeSet::new();
        let mut i = 0;
        while i < raw.len() {
            let arg = &raw[i];
            if !arg.starts_with("--") {
                return Err(Error::Input(format!("unexpected argument {arg:?}")));
            }
            let (name, inline) = match arg.split_once('=') {
                Some((n, v)) => (n.to_string(), Some(v.to_string())),
                None => (arg.clone(), None),
            };
            if switch_flags.contains(&name.as_str()) {
                if inline.is_some() {
                    return Err(Error::Input(format!("{name} takes no value")));
                }
                switches.insert(name);
            } else if value_flags.contains(&name.as_str()) {
                let value = match inline {
                    Some(v) => v,
                    None => {
                        i += 1;
                        raw.get(i)
                            .cloned()
                            .ok_or_else(|| Error::Input(format!("{name} needs a value")))?
                    }
                };
                values.insert(name, value);
            } else {
                return Err(Error::Input(format!("unknown flag {name}")));
            }
            i += 1;
        }
        Ok(Args { values, switches })
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(|s| s.as_str())
    }

    pub fn require(&self, name: &str) -> Result<&str> {
        self.get(name)
            .ok_or_else(|| Error::Input(format!("missing required flag {name}")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.switches.contains(name)
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, name: &str, default: T) -> Result<T> {
        match self.get(name) {
            None => Ok(default),
            Some(v) => v
                .parse::<T>()
                .map_err(|_| Error::Input(format!("cannot parse {name} value {v:?}"))),
        }
    }
}
