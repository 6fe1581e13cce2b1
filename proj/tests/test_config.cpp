// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>

#include "gbmbench/config.hpp"

using namespace gbmbench;

namespace {

ConfigSchema demo_schema() {
    ConfigSchema s;
    s.add_int("epochs", 10, "training epochs");
    s.add_real("lr", 1e-4, "learning rate");
    s.add_bool("shuffle", true, "shuffle each epoch");
    s.add_str("out", "results", "output directory");
    return s;
}

}  // namespace

TEST(Config, DefaultsAndOverrides) {
    const ConfigSchema schema = demo_schema();
    Config c(schema);
    EXPECT_EQ(c.get_int("epochs"), 10);
    EXPECT_DOUBLE_EQ(c.get_real("lr"), 1e-4);
    EXPECT_TRUE(c.get_bool("shuffle"));
    EXPECT_EQ(c.get_str("out"), "results");
    EXPECT_TRUE(c.is_default("epochs"));

    c.set("epochs", "3");
    c.set("shuffle", "false");
    EXPECT_EQ(c.get_int("epochs"), 3);
    EXPECT_FALSE(c.get_bool("shuffle"));
    EXPECT_FALSE(c.is_default("epochs"));

    // Int keys readable as real; the reverse is a programming error.
    EXPECT_DOUBLE_EQ(c.get_real("epochs"), 3.0);
    EXPECT_THROW(c.get_int("lr"), Error);
}

TEST(Config, StrictRejection) {
    const ConfigSchema schema = demo_schema();
    Config c(schema);
    EXPECT_THROW(c.set("epoch", "3"), ConfigError);     // typo'd key
    EXPECT_THROW(c.set("epochs", "ten"), ConfigError);  // type mismatch
    EXPECT_THROW(c.set("epochs", "3.5"), ConfigError);
    EXPECT_THROW(c.set("shuffle", "maybe"), ConfigError);
}

TEST(Config, FileParsing) {
    const ConfigSchema schema = demo_schema();
    const fs::path dir = fs::temp_directory_path() / "gbmbench_config";
    fs::create_directories(dir);

    atomic_write(dir / "good.toml",
                 "# comment line\n"
                 "epochs = 7\n"
                 "\n"
                 "lr = 5e-3  # trailing comment\n"
                 "out = \"run/a#b\"\n"
                 "shuffle = off\n");
    Config c(schema);
    c.load_file(dir / "good.toml");
    EXPECT_EQ(c.get_int("epochs"), 7);
    EXPECT_DOUBLE_EQ(c.get_real("lr"), 5e-3);
    EXPECT_EQ(c.get_str("out"), "run/a#b");  // '#' inside quotes survives
    EXPECT_FALSE(c.get_bool("shuffle"));

    atomic_write(dir / "unknown.toml", "epochz = 7\n");
    Config c2(schema);
    EXPECT_THROW(c2.load_file(dir / "unknown.toml"), ConfigError);

    atomic_write(dir / "noeq.toml", "epochs 7\n");
    Config c3(schema);
    EXPECT_THROW(c3.load_file(dir / "noeq.toml"), ConfigError);
}

TEST(Config, HashTracksResolvedValues) {
    const ConfigSchema schema = demo_schema();
    Config a(schema), b(schema);
    EXPECT_EQ(a.hash(), b.hash());
    b.set("epochs", "10");  // explicit value equal to the default
    EXPECT_EQ(a.hash(), b.hash()) << "hash covers resolved values, not provenance";
    b.set("epochs", "11");
    EXPECT_NE(a.hash(), b.hash());

    const auto r = a.resolved();
    EXPECT_EQ(r.at("out"), "results");
    EXPECT_EQ(r.size(), 4u);
}

TEST(Config, SchemaDescribeListsKeys) {
    const std::string doc = demo_schema().describe();
    EXPECT_NE(doc.find("epochs"), std::string::npos);
    EXPECT_NE(doc.find("(int, default: 10)"), std::string::npos);
    EXPECT_NE(doc.find("learning rate"), std::string::npos);
}
