//! Print the 42-joint schema table as JSON.
//!
//! ```text
//! cargo run -p handrig --example joint_schema > docs/joint_schema.json
//! ```

fn main() {
    let doc = handrig::pose::schema_document();
    println!("{}", serde_json::to_string_pretty(&doc).expect("serializable"));
}
