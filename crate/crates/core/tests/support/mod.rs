pub mod plain_block;
