//! Parameter checkpoints: a magic string, a JSON header describing the
//! sections, then raw little-endian f64 data per section. Round trips are
//! bit-exact.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{GeneralistPolicy, MlpSpec, ParamVector, StatePolicy};

pub const CHECKPOINT_SCHEMA: &str = "ckpt.v1";
const MAGIC: &[u8; 8] = b"DWCKPT01";

#[derive(Debug, Serialize, Deserialize)]
struct SectionHeader {
    name: String,
    spec: MlpSpec,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema: String,
    kind: String,
    sections: Vec<SectionHeader>,
    #[serde(default)]
    encoder_frozen: bool,
}

/// A loaded checkpoint of either policy kind.
pub enum PolicyCheckpoint {
    State(StatePolicy),
    Generalist(GeneralistPolicy),
}

fn write_bundle(path: &Path, header: &Header, sections: &[&ParamVector]) -> Result<()> {
    let header_bytes = serde_json::to_vec(header)?;
    let mut out = fs::File::create(path)?;
    out.write_all(MAGIC)?;
    out.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    out.write_all(&header_bytes)?;
    for section in sections {
        for v in &section.0 {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_bundle(path: &Path) -> Result<(Header, Vec<ParamVector>)> {
    let mut file = fs::File::open(path)?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format {
            path: path.display().to_string(),
            detail: "bad magic string".into(),
        });
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;
    if header.schema != CHECKPOINT_SCHEMA {
        return Err(Error::Format {
            path: path.display().to_string(),
            detail: format!("unsupported schema {:?}", header.schema),
        });
    }
    let mut sections = Vec::with_capacity(header.sections.len());
    for sh in &header.sections {
        if sh.len != sh.spec.param_count() {
            return Err(Error::Format {
                path: path.display().to_string(),
                detail: format!("section {} length mismatch", sh.name),
            });
        }
        let mut data = vec![0.0f64; sh.len];
        let mut buf = [0u8; 8];
        for v in data.iter_mut() {
            file.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        sections.push(ParamVector(data));
    }
    Ok((header, sections))
}

pub fn save_state_policy(policy: &StatePolicy, path: &Path) -> Result<()> {
    let header = Header {
        schema: CHECKPOINT_SCHEMA.into(),
        kind: "state_policy".into(),
        sections: vec![
            SectionHeader {
                name: "actor".into(),
                spec: policy.actor_spec.clone(),
                len: policy.actor.len(),
            },
            SectionHeader {
                name: "critic".into(),
                spec: policy.critic_spec.clone(),
                len: policy.critic.len(),
            },
        ],
        encoder_frozen: false,
    };
    write_bundle(path, &header, &[&policy.actor, &policy.critic])
}

pub fn load_state_policy(path: &Path) -> Result<StatePolicy> {
    match load_policy(path)? {
        PolicyCheckpoint::State(p) => Ok(p),
        PolicyCheckpoint::Generalist(_) => Err(Error::Format {
            path: path.display().to_string(),
            detail: "expected a state policy checkpoint".into(),
        }),
    }
}

pub fn save_generalist_policy(policy: &GeneralistPolicy, path: &Path) -> Result<()> {
    let header = Header {
        schema: CHECKPOINT_SCHEMA.into(),
        kind: "generalist".into(),
        sections: vec![
            SectionHeader {
                name: "encoder".into(),
                spec: policy.encoder_spec.clone(),
                len: policy.encoder.len(),
            },
            SectionHeader {
                name: "head".into(),
                spec: policy.head_spec.clone(),
                len: policy.head.len(),
            },
        ],
        encoder_frozen: policy.encoder_frozen,
    };
    write_bundle(path, &header, &[&policy.encoder, &policy.head])
}

pub fn load_generalist_policy(path: &Path) -> Result<GeneralistPolicy> {
    match load_policy(path)? {
        PolicyCheckpoint::Generalist(p) => Ok(p),
        PolicyCheckpoint::State(_) => Err(Error::Format {
            path: path.display().to_string(),
            detail: "expected a generalist policy checkpoint".into(),
        }),
    }
}

/// Load a checkpoint of either kind.
pub fn load_policy(path: &Path) -> Result<PolicyCheckpoint> {
    let (header, mut sections) = read_bundle(path)?;
    let bad = |detail: &str| Error::Format {
        path: path.display().to_string(),
        detail: detail.into(),
    };
    match header.kind.as_str() {
        "state_policy" => {
            if sections.len() != 2 {
                return Err(bad("state policy needs actor and critic sections"));
            }
            let critic = sections.pop().unwrap();
            let actor = sections.pop().unwrap();
            Ok(PolicyCheckpoint::State(StatePolicy {
                actor_spec: header.sections[0].spec.clone(),
                critic_spec: header.sections[1].spec.clone(),
                actor,
                critic,
            }))
        }
        "generalist" => {
            if sections.len() != 2 {
                return Err(bad("generalist needs encoder and head sections"));
            }
            let head = sections.pop().unwrap();
            let encoder = sections.pop().unwrap();
            Ok(PolicyCheckpoint::Generalist(GeneralistPolicy {
                encoder_spec: header.sections[0].spec.clone(),
                head_spec: header.sections[1].spec.clone(),
                encoder,
                head,
                encoder_frozen: header.encoder_frozen,
            }))
        }
        other => Err(bad(&format!("unknown checkpoint kind {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_policy_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let policy = StatePolicy::new(3);
        save_state_policy(&policy, &path).unwrap();
        let back = load_state_policy(&path).unwrap();
        assert_eq!(policy, back);
    }

    #[test]
    fn generalist_round_trip_keeps_freeze_flag() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ckpt");
        let mut policy = GeneralistPolicy::new(5);
        policy.encoder_frozen = true;
        save_generalist_policy(&policy, &path).unwrap();
        let back = load_generalist_policy(&path).unwrap();
        assert_eq!(policy, back);
        assert!(back.encoder_frozen);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxxx").unwrap();
        assert!(matches!(load_policy(&path), Err(Error::Format { .. })));
    }
}
