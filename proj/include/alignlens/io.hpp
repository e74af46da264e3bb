#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace alignlens {

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

std::string sha256_hex(std::string_view bytes);

}  // namespace alignlens
