#include <CLI11.hpp>

#include <iostream>

#include "toy_model_server.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Toy distribution server speaking the adapter wire protocol"};
  std::string host = "127.0.0.1";
  int port = 8765;
  shimer::toy::Server::Options options;
  app.add_option("--host", host);
  app.add_option("--port", port);
  app.add_option("--model", options.model);
  CLI11_PARSE(app, argc, argv);

  shimer::toy::Server server(options);
  std::cerr << "serving " << options.model << " on " << host << ":" << port << "\n";
  return server.listen(host, port) ? 0 : 1;
}
