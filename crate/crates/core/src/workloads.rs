//! Canonical query scripts used by the demo scenario and the benchmarks.

/// Per-user estimated revenue: join of projected page views and users.
pub const Q1: &str = "\
A = load 'page_views' as (user, timestamp, est_revenue, page_info, page_links);
B = foreach A generate user, est_revenue;
alpha = load 'users' using (name, phone, address, city);
beta = foreach alpha generate name;
C = join beta by name, B by user;
store C into 'L2_out';
";

/// Total estimated revenue per user name, built on the same join as `Q1`.
pub const Q2: &str = "\
A = load 'page_views' as (user, timestamp, est_revenue, page_info, page_links);
B = foreach A generate user, est_revenue;
alpha = load 'users' using (name, phone, address, city);
beta = foreach alpha generate name;
C = join beta by name, B by user;
D = group C by $0;
E = foreach D generate group, SUM(C.est_revenue);
store E into 'L3_out';
";

/// Columns of the synthetic benchmark table.
pub fn synthetic_columns() -> Vec<String> {
    (1..=12).map(|i| format!("field{i}")).collect()
}

fn load_synthetic(data: &str) -> String {
    format!("A = load '{data}' as ({});\n", synthetic_columns().join(", "))
}

/// Project the first `width` string fields, group on all of them, count.
pub fn qp_script(data: &str, width: usize, out: &str) -> String {
    let fields: Vec<String> = (1..=width).map(|i| format!("field{i}")).collect();
    let list = fields.join(", ");
    format!(
        "{}B = foreach A generate {list};\nC = group B by ({list});\nD = foreach C generate COUNT($1);\nstore D into '{out}';\n",
        load_synthetic(data)
    )
}

/// Keep rows whose `field` equals `value`, group on field1, count.
pub fn qf_script(data: &str, field: usize, value: &str, out: &str) -> String {
    format!(
        "{}B = filter A by field{field} == {value};\nC = group B by field1;\nD = foreach C generate COUNT($1);\nstore D into '{out}';\n",
        load_synthetic(data)
    )
}

/// Q1/Q2 with the dataset names and output paths substituted.
pub fn pigmix_script(template: &str, page_views: &str, users: &str, out: &str) -> String {
    let default_out = if template.contains("'L2_out'") { "'L2_out'" } else { "'L3_out'" };
    template
        .replace("'page_views'", &format!("'{page_views}'"))
        .replace("'users'", &format!("'{users}'"))
        .replace(default_out, &format!("'{out}'"))
}
