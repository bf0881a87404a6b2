//! Parsing, validating, rendering and JSON-converting reasoning traces.

use reasoning_flow::iccot::{parse_trace, render_trace, trace_from_json, trace_to_json, validate};

fn main() {
    let text = "<relation_2> provides the background </relation_2>\n\
                <out_caption>a red fox sitting in a forest</out_caption>\n\
                <relation_1>provides the fox</relation_1>";
    let trace = parse_trace(text, 2).expect("valid trace");
    println!("caption:   {}", trace.caption());
    println!("relations: {:?}", trace.relations());
    println!("canonical: {}", render_trace(&trace));
    let json = trace_to_json(&trace);
    println!("json:      {json}");
    assert_eq!(trace_from_json(&json).unwrap(), trace);

    for (bad, refs) in [
        ("<out_caption>scene</out_caption>", 2),
        ("<out_caption>a</out_caption><relation_1>x</relation_1><relation_1>y</relation_1>", 1),
        ("<out_caption>a</out_caption> stray <relation_1>x</relation_1>", 1),
        ("<out_caption>a<relation_1>x</relation_1></out_caption>", 1),
    ] {
        println!("\n{bad:?} with {refs} reference(s):\n{}", validate(bad, refs));
    }
}
