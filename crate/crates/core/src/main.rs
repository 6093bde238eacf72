// SPDX-License-Identifier: Apache-2.0

fn main() {
    std::process::exit(buck_trojan::cli::main());
}
