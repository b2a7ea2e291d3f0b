use chrono::{SecondsFormat, Utc};
use serde_json::{json, Map, Value};
use thiserror::Error;
use uuid::Uuid;

pub const PROTOCOL_VERSION: &str = "5.3";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MessageError {
    #[error("message is not valid JSON: {0}")]
    NotJson(String),
    #[error("message header is missing `{0}`")]
    MissingHeaderField(&'static str),
    #[error("`{0}` must be a JSON object")]
    NotAnObject(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub msg_id: String,
    pub session: String,
    pub username: String,
    pub msg_type: String,
    pub version: String,
    /// ISO-8601 timestamp.
    pub date: String,
}

impl Header {
    pub fn new(msg_type: &str, session: &str, username: &str) -> Self {
        Header {
            msg_id: Uuid::new_v4().to_string(),
            session: session.to_string(),
            username: username.to_string(),
            msg_type: msg_type.to_string(),
            version: PROTOCOL_VERSION.to_string(),
            date: Utc::now().to_rfc3339_opts(SecondsFormat::Micros, true),
        }
    }

    fn to_value(&self) -> Value {
        json!({
            "msg_id": self.msg_id,
            "session": self.session,
            "username": self.username,
            "msg_type": self.msg_type,
            "version": self.version,
            "date": self.date,
        })
    }

    fn from_object(obj: &Map<String, Value>) -> Result<Self, MessageError> {
        let required = |name: &'static str| {
            obj.get(name)
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or(MessageError::MissingHeaderField(name))
        };
        let optional = |name: &str| {
            obj.get(name)
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_string()
        };
        Ok(Header {
            msg_id: required("msg_id")?,
            session: required("session")?,
            username: optional("username"),
            msg_type: required("msg_type")?,
            version: optional("version"),
            date: optional("date"),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelMessage {
    pub header: Header,
    /// `None` serializes as `{}`.
    pub parent_header: Option<Header>,
    pub metadata: Map<String, Value>,
    pub content: Map<String, Value>,
    /// `shell`, `iopub`, ... when multiplexed over one WebSocket.
    pub channel: Option<String>,
}

impl KernelMessage {
    pub fn msg_type(&self) -> &str {
        &self.header.msg_type
    }

    /// A message whose parent is `parent`, in the same session.
    pub fn reply_to(parent: &KernelMessage, msg_type: &str, content: Value, channel: &str) -> Self {
        let content = match content {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        KernelMessage {
            header: Header::new(msg_type, &parent.header.session, "kernel"),
            parent_header: Some(parent.header.clone()),
            metadata: Map::new(),
            content,
            channel: Some(channel.to_string()),
        }
    }

    pub fn to_value(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("header".into(), self.header.to_value());
        obj.insert(
            "parent_header".into(),
            self.parent_header
                .as_ref()
                .map_or_else(|| Value::Object(Map::new()), Header::to_value),
        );
        obj.insert("metadata".into(), Value::Object(self.metadata.clone()));
        obj.insert("content".into(), Value::Object(self.content.clone()));
        if let Some(ch) = &self.channel {
            obj.insert("channel".into(), Value::from(ch.as_str()));
        }
        Value::Object(obj)
    }

    pub fn to_json(&self) -> String {
        self.to_value().to_string()
    }
}

pub fn make_execute_request(code: &str, session: &str) -> KernelMessage {
    let content = json!({
        "code": code,
        "silent": false,
        "store_history": true,
        "user_expressions": {},
        "allow_stdin": false,
        "stop_on_error": true,
    });
    KernelMessage {
        header: Header::new("execute_request", session, "notebook-gate"),
        parent_header: None,
        metadata: Map::new(),
        content: content.as_object().cloned().unwrap_or_default(),
        channel: Some("shell".into()),
    }
}

fn section(
    obj: &mut Map<String, Value>,
    name: &'static str,
) -> Result<Map<String, Value>, MessageError> {
    match obj.remove(name) {
        None | Some(Value::Null) => Ok(Map::new()),
        Some(Value::Object(m)) => Ok(m),
        Some(_) => Err(MessageError::NotAnObject(name)),
    }
}

pub fn parse_message(raw: &[u8]) -> Result<KernelMessage, MessageError> {
    let value: Value =
        serde_json::from_slice(raw).map_err(|e| MessageError::NotJson(e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(MessageError::NotAnObject("message"));
    };
    let header = Header::from_object(&section(&mut obj, "header")?)?;
    let parent = section(&mut obj, "parent_header")?;
    let parent_header = if parent.is_empty() {
        None
    } else {
        Some(Header::from_object(&parent)?)
    };
    Ok(KernelMessage {
        header,
        parent_header,
        metadata: section(&mut obj, "metadata")?,
        content: section(&mut obj, "content")?,
        channel: obj
            .get("channel")
            .and_then(Value::as_str)
            .map(str::to_string),
    })
}

/// True iff `reply` names `request` as its parent.
pub fn correlate(reply: &KernelMessage, request: &KernelMessage) -> bool {
    reply
        .parent_header
        .as_ref()
        .is_some_and(|p| p.msg_id == request.header.msg_id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionResult {
    pub status: ExecStatus,
    pub execution_count: u64,
    pub stream_text: String,
    pub error_name: Option<String>,
    pub error_traceback: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    // An execute_reply laid out the way Jupyter Server 5.x emits it on the
    // channels socket (transcribed, ids anonymised).
    const EXECUTE_REPLY: &str = r#"{"header": {"msg_id": "3f1c7a0e-5e3b4f6c9d1b2a7e_12_3", "msg_type": "execute_reply", "username": "username", "session": "3f1c7a0e-5e3b4f6c9d1b2a7e", "date": "2019-05-14T10:21:07.955441Z", "version": "5.3"}, "msg_id": "3f1c7a0e-5e3b4f6c9d1b2a7e_12_3", "msg_type": "execute_reply", "parent_header": {"msg_id": "b0e9f2a6c8d34e1f9a7b5c3d2e1f0a9b", "username": "username", "session": "6a5d3c2b1e0f4a9b8c7d6e5f4a3b2c1d", "msg_type": "execute_request", "version": "5.2", "date": "2019-05-14T10:21:07.941000Z"}, "metadata": {"started": "2019-05-14T10:21:07.946979Z", "dependencies_met": true, "engine": "0b7f5d3c-1a2e-4f6b-8c9d-0e1f2a3b4c5d", "status": "ok"}, "content": {"status": "ok", "execution_count": 1, "user_expressions": {}, "payload": []}, "buffers": [], "channel": "shell"}"#;

    #[test]
    fn execute_request_shape() {
        let m = make_execute_request("1+1", "s1");
        assert_eq!(m.msg_type(), "execute_request");
        assert_eq!(m.content["code"], json!("1+1"));
        assert_eq!(m.content["silent"], json!(false));
        assert_eq!(m.content["store_history"], json!(true));
        assert_eq!(m.content["allow_stdin"], json!(false));
        assert_eq!(m.content["stop_on_error"], json!(true));
        assert!(m.parent_header.is_none());
        assert_eq!(m.header.session, "s1");
        assert_eq!(m.to_value()["parent_header"], json!({}));
    }

    #[test]
    fn fresh_ids() {
        let a = make_execute_request("1", "s");
        let b = make_execute_request("1", "s");
        assert_ne!(a.header.msg_id, b.header.msg_id);
    }

    #[test]
    fn round_trip() {
        let m = make_execute_request("2+40", "sess");
        assert_eq!(parse_message(m.to_json().as_bytes()).unwrap(), m);
        let r = KernelMessage::reply_to(&m, "status", json!({"execution_state": "busy"}), "iopub");
        assert_eq!(parse_message(r.to_json().as_bytes()).unwrap(), r);
    }

    #[test]
    fn missing_fields() {
        assert_eq!(
            parse_message(b"{}"),
            Err(MessageError::MissingHeaderField("msg_id"))
        );
        assert_eq!(
            parse_message(br#"{"header":{"msg_id":"x","session":"s"}}"#),
            Err(MessageError::MissingHeaderField("msg_type"))
        );
        assert!(matches!(
            parse_message(b"not json"),
            Err(MessageError::NotJson(_))
        ));
        assert_eq!(
            parse_message(
                br#"{"header":{"msg_id":"x","session":"s","msg_type":"t"},"content":[]}"#
            ),
            Err(MessageError::NotAnObject("content"))
        );
    }

    #[test]
    fn captured_execute_reply() {
        let m = parse_message(EXECUTE_REPLY.as_bytes()).unwrap();
        assert_eq!(m.msg_type(), "execute_reply");
        assert_eq!(m.content["execution_count"], json!(1));
        assert_eq!(m.channel.as_deref(), Some("shell"));
        assert_eq!(
            m.parent_header.as_ref().unwrap().msg_id,
            "b0e9f2a6c8d34e1f9a7b5c3d2e1f0a9b"
        );
    }

    #[test]
    fn correlation() {
        let req = make_execute_request("1+1", "s");
        let other = make_execute_request("1+1", "s");
        let reply =
            KernelMessage::reply_to(&req, "execute_reply", json!({"status": "ok"}), "shell");
        assert!(correlate(&reply, &req));
        assert!(!correlate(&reply, &other));
        assert!(!correlate(&other, &req));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_header() -> impl Strategy<Value = Header> {
            (
                "[a-f0-9-]{1,36}",
                ".{0,12}",
                ".{0,12}",
                "[a-z_]{1,20}",
                "[0-9.]{0,4}",
                ".{0,30}",
            )
                .prop_map(|(msg_id, session, username, msg_type, version, date)| {
                    Header {
                        msg_id,
                        session,
                        username,
                        msg_type,
                        version,
                        date,
                    }
                })
        }

        fn arb_map() -> impl Strategy<Value = Map<String, Value>> {
            proptest::collection::btree_map("[a-z]{1,8}", any::<i64>(), 0..4)
                .prop_map(|m| m.into_iter().map(|(k, v)| (k, Value::from(v))).collect())
        }

        proptest! {
            #[test]
            fn serialization_is_identity(
                header in arb_header(),
                parent in proptest::option::of(arb_header()),
                metadata in arb_map(),
                content in arb_map(),
                channel in proptest::option::of("[a-z]{1,8}"),
            ) {
                let m = KernelMessage { header, parent_header: parent, metadata, content, channel };
                prop_assert_eq!(parse_message(m.to_json().as_bytes()).unwrap(), m);
            }
        }
    }
}
