#pragma once

#include <stdexcept>
#include <string>

namespace mflow {

/// Base of all library errors. The category decides the CLI exit code:
/// input/validation problems map to 1, numerical failures to 2.
class Error : public std::runtime_error {
public:
  enum class Category { Input, Numerical };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }

private:
  Category category_;
};

class TopologyError : public Error {
public:
  explicit TopologyError(const std::string& what) : Error(Category::Input, what) {}
};

class StructureError : public Error {
public:
  explicit StructureError(const std::string& what) : Error(Category::Input, what) {}
};

class ParseError : public Error {
public:
  explicit ParseError(const std::string& what) : Error(Category::Input, what) {}
};

class DegenerateGeometryError : public Error {
public:
  explicit DegenerateGeometryError(const std::string& what) : Error(Category::Numerical, what) {}
};

class DivergenceError : public Error {
public:
  DivergenceError(int step, const std::string& what)
      : Error(Category::Numerical, what), step_(step) {}
  int step() const noexcept { return step_; }

private:
  int step_;
};

}  // namespace mflow
